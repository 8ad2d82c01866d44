pub mod control;
pub mod dpi;
pub mod edge;
pub mod ids;
pub mod metrics;
pub mod qoc;
pub mod runner;
pub mod scenario;
pub mod sensor;
