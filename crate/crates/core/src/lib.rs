pub mod container;
pub mod motion;
pub mod numerics;
pub mod rvq;
pub mod skelembed;
pub mod skeleton;
