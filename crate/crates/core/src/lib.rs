pub mod cli;
pub mod config;
pub mod decoder;
pub mod error;
pub mod eval;
pub mod gp;
pub mod gplvm;
pub mod linalg;
pub mod maps;
pub mod material;
pub mod optim;
pub mod recommend;
pub mod render;
pub mod seed;
pub mod service;
pub mod session;
