pub mod cases;
pub mod fixture;
pub mod oracles;
