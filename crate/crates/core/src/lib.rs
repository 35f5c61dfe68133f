pub mod bench;
pub mod faas;
pub mod ipc;
pub mod net;
pub mod objectfs;
pub mod orchestrator;
pub mod procpool;
pub mod store;
pub mod time;
pub mod wire;
