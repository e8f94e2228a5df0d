//! Exactly linear synthetic environment `b = M (theta + bias) + c`, used as
//! an oracle for the Jacobian machinery.

use std::sync::Arc;

use rand::Rng;

use super::{Environment, RealityGap};
use crate::error::{check_dim, Result};
use crate::mathkit::Matrix;
use crate::motion::{ControllerParams, Outcome, ParamBounds};

#[derive(Debug, Clone)]
pub struct LinearEnv {
    pub map: Matrix,
    pub offset: Vec<f64>,
    bounds: Arc<ParamBounds>,
    pub novelty_radius: f64,
    pub tolerance: f64,
}

impl LinearEnv {
    pub fn new(map: Matrix, offset: Vec<f64>, bounds: ParamBounds) -> Result<Self> {
        check_dim("linear offset", map.rows(), offset.len())?;
        check_dim("linear bounds", map.cols(), bounds.dim())?;
        Ok(Self {
            map,
            offset,
            bounds: Arc::new(bounds),
            novelty_radius: 0.01,
            tolerance: 1e-6,
        })
    }

    /// Random `d x dim` map with standard normal entries, parameters in [-1, 1].
    pub fn random<R: Rng + ?Sized>(d: usize, dim: usize, rng: &mut R) -> Self {
        let map = Matrix::random_normal(d, dim, rng);
        let offset = (0..d).map(|_| rng.random_range(-1.0..1.0)).collect();
        Self::new(map, offset, ParamBounds::uniform(dim, -1.0, 1.0)).expect("consistent shapes")
    }

    pub fn params(&self, values: Vec<f64>) -> Result<ControllerParams> {
        ControllerParams::new(values, self.bounds.clone())
    }
}

impl Environment for LinearEnv {
    fn name(&self) -> &str {
        "linear"
    }

    fn bounds(&self) -> Arc<ParamBounds> {
        self.bounds.clone()
    }

    fn outcome_dim(&self) -> usize {
        self.map.rows()
    }

    /// The gap's joint bias is added cyclically to the parameters; gravity
    /// and link scaling do not apply to a linear map.
    fn execute(&self, gap: &RealityGap, theta: &ControllerParams) -> Result<Outcome> {
        check_dim("controller", self.map.cols(), theta.dim())?;
        let shifted: Vec<f64> = theta
            .values()
            .iter()
            .enumerate()
            .map(|(i, v)| {
                if gap.joint_bias.is_empty() {
                    *v
                } else {
                    v + gap.joint_bias[i % gap.joint_bias.len()]
                }
            })
            .collect();
        let mut b = self.map.matvec(&shifted)?;
        for (x, c) in b.iter_mut().zip(&self.offset) {
            *x += c;
        }
        Ok(Outcome::valid(b))
    }

    fn quality(&self, theta: &ControllerParams, _outcome: &Outcome, _seed: u64) -> f64 {
        -theta.values().iter().map(|v| v * v).sum::<f64>()
    }

    fn novelty_radius(&self) -> f64 {
        self.novelty_radius
    }

    fn tolerance(&self) -> f64 {
        self.tolerance
    }
}
