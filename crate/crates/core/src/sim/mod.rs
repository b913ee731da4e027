//! Exact pure-state and density-matrix simulation of small circuits.

pub mod ansatz;
pub mod gate;
pub mod gradient;
pub mod kernels;
pub mod state;

pub use ansatz::{Entangler, LayeredAnsatz};
pub use gate::{run_circuit, run_circuit_mixed, CircuitSpec, Gate, GateKind};
pub use gradient::{parameter_shift_gradient, parameter_shift_gradient_mixed, ZObservable};
pub use state::{depolarizing_kraus, state_fidelity, MixedState, PureState, QuantumState};
