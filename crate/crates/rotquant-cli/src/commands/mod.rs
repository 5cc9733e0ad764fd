pub mod bench;
pub mod gen;
pub mod quantize;
pub mod selftest;
pub mod simulate;
