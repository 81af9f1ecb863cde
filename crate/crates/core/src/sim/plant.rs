//! LC filter plus grid R-L branch, advanced by exact zero-order-hold
//! discretization.

use nalgebra::SMatrix;
use serde::{Deserialize, Serialize};

use crate::models::{GridParams, PlantParams};
use crate::tf::Complex;

/// Space-vector states of the output network.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct PlantState {
    /// Inverter-side inductor current.
    pub i_f: Complex,
    /// Capacitor voltage, i.e. the PCC voltage.
    pub v_c: Complex,
    /// Grid-branch current.
    pub i_g: Complex,
}

impl PlantState {
    pub fn is_finite(&self) -> bool {
        [self.i_f, self.v_c, self.i_g]
            .iter()
            .all(|c| c.re.is_finite() && c.im.is_finite())
    }

    /// Magnetic plus electric energy per unit of `|x|^2 / 2`.
    pub fn stored_energy(&self, p: &PlantParams, g: &GridParams) -> f64 {
        0.5 * (p.l_f * self.i_f.norm_sqr() + p.c_f * self.v_c.norm_sqr() + g.l_g * self.i_g.norm_sqr())
    }
}

#[derive(Debug, Clone, PartialEq)]
enum Network {
    /// States `[i_f, v_c, i_g]`, inputs `[v_o, emf]`.
    Lc {
        ad: SMatrix<f64, 3, 3>,
        bd: SMatrix<f64, 3, 2>,
    },
    /// No filter capacitor: a single series inductance carries both currents.
    Series {
        decay: f64,
        gain: f64,
        l_f: f64,
        l_total: f64,
        r_g: f64,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct PlantModel {
    network: Network,
    dt: f64,
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum PlantError {
    #[error("sub-step must be finite and positive, got {0}")]
    InvalidStep(f64),
    #[error("a filter capacitor needs a grid inductance (l_g > 0)")]
    CapacitorNeedsGridInductance,
    #[error("series network needs l_f + l_g > 0")]
    NoInductance,
}

impl PlantModel {
    pub fn new(p: &PlantParams, g: &GridParams, dt: f64) -> Result<Self, PlantError> {
        if !(dt.is_finite() && dt > 0.0) {
            return Err(PlantError::InvalidStep(dt));
        }
        let network = if p.c_f > 0.0 {
            if g.l_g <= 0.0 {
                return Err(PlantError::CapacitorNeedsGridInductance);
            }
            let mut m = SMatrix::<f64, 5, 5>::zeros();
            m[(0, 1)] = -1.0 / p.l_f;
            m[(1, 0)] = 1.0 / p.c_f;
            m[(1, 2)] = -1.0 / p.c_f;
            m[(2, 1)] = 1.0 / g.l_g;
            m[(2, 2)] = -g.r_g / g.l_g;
            m[(0, 3)] = 1.0 / p.l_f;
            m[(2, 4)] = -1.0 / g.l_g;
            let e = (m * dt).exp();
            Network::Lc {
                ad: e.fixed_view::<3, 3>(0, 0).into_owned(),
                bd: e.fixed_view::<3, 2>(0, 3).into_owned(),
            }
        } else {
            let l_total = p.l_f + g.l_g;
            if l_total <= 0.0 {
                return Err(PlantError::NoInductance);
            }
            let decay = (-g.r_g * dt / l_total).exp();
            let gain = if g.r_g > 0.0 {
                (1.0 - decay) / g.r_g
            } else {
                dt / l_total
            };
            Network::Series {
                decay,
                gain,
                l_f: p.l_f,
                l_total,
                r_g: g.r_g,
            }
        };
        Ok(Self { network, dt })
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    /// Advances one sub-step with `v_o` and `emf` held constant.
    pub fn step(&self, x: &PlantState, v_o: Complex, emf: Complex) -> PlantState {
        match &self.network {
            Network::Lc { ad, bd } => {
                let s = [x.i_f, x.v_c, x.i_g];
                let u = [v_o, emf];
                let mut out = [Complex::new(0.0, 0.0); 3];
                for (r, o) in out.iter_mut().enumerate() {
                    for (c, sc) in s.iter().enumerate() {
                        *o += *sc * ad[(r, c)];
                    }
                    for (c, uc) in u.iter().enumerate() {
                        *o += *uc * bd[(r, c)];
                    }
                }
                PlantState {
                    i_f: out[0],
                    v_c: out[1],
                    i_g: out[2],
                }
            }
            Network::Series {
                decay,
                gain,
                l_f,
                l_total,
                r_g,
            } => {
                let i = x.i_f * *decay + (v_o - emf) * *gain;
                let di = (v_o - emf - i * *r_g) / *l_total;
                PlantState {
                    i_f: i,
                    v_c: v_o - di * *l_f,
                    i_g: i,
                }
            }
        }
    }
}

/// One sub-step of the output network. Builds the discretization on every
/// call; the simulator keeps a [`PlantModel`] instead.
pub fn plant_step(
    state: &PlantState,
    v_o: Complex,
    grid_emf: Complex,
    dt: f64,
    p: &PlantParams,
    g: &GridParams,
) -> Result<PlantState, PlantError> {
    Ok(PlantModel::new(p, g, dt)?.step(state, v_o, grid_emf))
}
