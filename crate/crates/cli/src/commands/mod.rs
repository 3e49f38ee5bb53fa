pub mod init;
pub mod sweep;
pub mod theory;
pub mod train;
