pub mod cli;
pub mod config;
pub mod export;
pub mod gateway;
pub mod model_file;
pub mod node;
pub mod series;
pub mod server;
pub mod store;
pub mod timefmt;
