pub mod exchange;
pub mod fit;
pub mod options;
pub mod simulate;
pub mod sweep;
pub mod table;
pub mod theory;
