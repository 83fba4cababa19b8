//! Ground-truth trajectory generation for the benchmark systems.
//!
//! Reaction-diffusion systems (two components, periodic boundaries, explicit
//! Euler in f64) live in [`reaction`]; the cylinder wake solved with a D2Q9
//! lattice Boltzmann scheme lives in [`lbm`]. States are cast to f32 only on
//! export into [`Trajectory`].

pub mod lbm;
pub mod reaction;

pub use lbm::{simulate_cylinder_lbm, CylinderConfig};
pub use reaction::{
    laplacian_periodic, simulate_brusselator, simulate_gray_scott, simulate_lambda_omega,
    RdKind, SimConfig,
};

use crate::error::SimError;
use crate::tensor::Tensor;

/// Spatial discretization shared by all simulators.
#[derive(Clone, Debug, PartialEq)]
pub struct GridSpec {
    pub height: usize,
    pub width: usize,
    /// Physical length per cell.
    pub dx: f64,
    pub boundary: Boundary,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Boundary {
    Periodic,
    /// Bounce-back walls with inflow (west) and outflow (east).
    BounceBackInflowOutflow,
}

impl GridSpec {
    pub fn periodic(height: usize, width: usize, dx: f64) -> Result<Self, SimError> {
        Self::checked(height, width, dx, Boundary::Periodic)
    }

    pub fn channel(height: usize, width: usize, dx: f64) -> Result<Self, SimError> {
        Self::checked(height, width, dx, Boundary::BounceBackInflowOutflow)
    }

    fn checked(height: usize, width: usize, dx: f64, boundary: Boundary) -> Result<Self, SimError> {
        if height < 4 || width < 4 {
            return Err(SimError::BadConfig(format!(
                "grid extents must be >= 4, got {height}x{width}"
            )));
        }
        if dx <= 0.0 {
            return Err(SimError::BadConfig(format!("spatial step {dx} must be positive")));
        }
        Ok(Self {
            height,
            width,
            dx,
            boundary,
        })
    }
}

/// Configuration echo attached to every generated trajectory.
#[derive(Clone, Debug, Default)]
pub struct SimMeta {
    pub system: String,
    pub seed: u64,
    pub entries: Vec<(String, String)>,
}

impl SimMeta {
    pub fn manifest_lines(&self) -> String {
        let mut out = format!("system = {}\nseed = {}\n", self.system, self.seed);
        for (k, v) in &self.entries {
            out.push_str(&format!("{k} = {v}\n"));
        }
        out
    }

    #[doc(hidden)]
    pub fn test_stub(seed: u64) -> Self {
        Self {
            system: "stub".into(),
            seed,
            entries: Vec::new(),
        }
    }
}

/// Time-ordered `[c, h, w]` snapshots with the generating configuration.
#[derive(Clone, Debug)]
pub struct Trajectory {
    pub states: Vec<Tensor>,
    pub meta: SimMeta,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }
}

/// Keep every `factor`-th snapshot starting at index 0.
pub fn downsample_time(traj: &Trajectory, factor: usize) -> Result<Trajectory, SimError> {
    if factor == 0 || factor > traj.states.len() {
        return Err(SimError::BadDownsample {
            factor,
            len: traj.states.len(),
        });
    }
    Ok(Trajectory {
        states: traj.states.iter().step_by(factor).cloned().collect(),
        meta: traj.meta.clone(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn traj_of_len(n: usize) -> Trajectory {
        Trajectory {
            states: (0..n).map(|i| Tensor::scalar(i as f32)).collect(),
            meta: SimMeta::test_stub(0),
        }
    }

    #[test]
    fn downsample_identity_at_factor_one() {
        let t = traj_of_len(7);
        let d = downsample_time(&t, 1).unwrap();
        assert_eq!(d.len(), 7);
    }

    #[test]
    fn downsample_keeps_every_tenth_from_zero() {
        let t = traj_of_len(100);
        let d = downsample_time(&t, 10).unwrap();
        assert_eq!(d.len(), 10);
        for (i, s) in d.states.iter().enumerate() {
            assert_eq!(s.item(), (i * 10) as f32);
        }
    }

    #[test]
    fn downsample_composes() {
        let t = traj_of_len(100);
        let a = downsample_time(&downsample_time(&t, 2).unwrap(), 5).unwrap();
        let b = downsample_time(&t, 10).unwrap();
        assert_eq!(a.len(), b.len());
        for (x, y) in a.states.iter().zip(b.states.iter()) {
            assert_eq!(x.item(), y.item());
        }
    }

    #[test]
    fn downsample_rejects_factor_beyond_length() {
        let t = traj_of_len(5);
        assert!(matches!(
            downsample_time(&t, 6),
            Err(SimError::BadDownsample { .. })
        ));
        assert!(matches!(
            downsample_time(&t, 0),
            Err(SimError::BadDownsample { .. })
        ));
    }

    #[test]
    fn grid_rejects_tiny_extents() {
        assert!(GridSpec::periodic(3, 8, 0.5).is_err());
        assert!(GridSpec::periodic(8, 8, 0.0).is_err());
        assert!(GridSpec::periodic(8, 8, 0.5).is_ok());
    }
}
