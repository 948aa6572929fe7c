pub mod bus;
pub mod clock;
pub mod kinematics;
pub mod retarget;
pub mod safety;
pub mod session;
pub mod recorder;
pub mod simdev;
pub mod rig;
pub mod teleop;
pub mod analyze;
