//! Frame design, power allocation and validation for massive-MIMO V2V
//! URLLC underlaying a cellular uplink in an urban grid.

pub mod geometry;
pub mod quad;
pub mod rng;
pub mod pathloss;
pub mod fbl;
pub mod sinr_bounds;
pub mod frame_design;
pub mod gp_alloc;
pub mod harness;
pub mod link_mc;
pub mod scheduler;
