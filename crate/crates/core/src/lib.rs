//! Lumped-parameter simulation of recirculating-flow soft robots.
//!
//! The [`circuit`] module solves fluidic networks; [`actuator`] and
//! [`assembly`] build the robots on top of it; [`mocap`] turns marker tracks
//! into curvature responses; [`teleop`] runs steerable live sessions.

pub mod actuator;
pub mod assembly;
pub mod circuit;
pub mod error;
pub mod fluids;
pub mod mocap;
pub mod teleop;

pub use actuator::{ActuatorModel, ActuatorState, Direction, Drive};
pub use assembly::{AssemblySpec, GripperAssembly, PortRole, QuadrupedAssembly, SignPattern};
pub use circuit::{Element, Law, Network, Node, SolverSettings, SteadyState};
pub use error::{Error, Result};
pub use fluids::Fluid;
pub use mocap::{ArcFit, MarkerFrame};
pub use teleop::{Ack, ControlFrame, Session, Snapshot};
