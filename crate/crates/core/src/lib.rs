pub mod backends;
pub mod cli;
pub mod demo;
pub mod detector;
pub mod emulator;
pub mod exactnum;
pub mod presets;
pub mod selftest;
pub mod softfp;
