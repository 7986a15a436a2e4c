use super::{GateSet, Parameterization};
use crate::error::{invalid, Result};
use crate::linalg::{cond, expm, inverse, nullspace, range_basis, Mat};

/// An invertible superoperator `M` acting as `E -> E M^-1, rho -> M rho, G -> M G M^-1`.
#[derive(Clone, Debug)]
pub struct GaugeElement {
    pub m: Mat,
    pub k: Option<Mat>,
}

impl GaugeElement {
    pub fn new(m: Mat) -> Result<Self> {
        if m.nrows() != m.ncols() || !cond(&m).is_finite() || cond(&m) > 1e14 {
            return invalid("gauge element must be square and invertible");
        }
        Ok(GaugeElement { m, k: None })
    }

    pub fn from_generator(k: Mat) -> Self {
        GaugeElement {
            m: expm(&k),
            k: Some(k),
        }
    }

    pub fn identity(n: usize) -> Self {
        GaugeElement {
            m: Mat::identity(n, n),
            k: Some(Mat::zeros(n, n)),
        }
    }

    pub fn inverse(&self) -> Result<Self> {
        Ok(GaugeElement {
            m: inverse(&self.m)?,
            k: self.k.as_ref().map(|k| -k),
        })
    }
}

pub fn apply_gauge(gs: &GateSet, g: &GaugeElement) -> Result<GateSet> {
    let n = gs.d2();
    if g.m.nrows() != n || g.m.ncols() != n {
        return invalid("gauge element dimension does not match the gate set");
    }
    if !cond(&g.m).is_finite() || cond(&g.m) > 1e14 {
        return invalid("singular gauge element");
    }
    let minv = inverse(&g.m)?;
    let mut out = gs.clone();
    for p in out.preps.iter_mut() {
        *p = &g.m * &*p;
    }
    for gate in out.gates.iter_mut() {
        *gate = &g.m * &*gate * &minv;
    }
    for povm in out.povms.iter_mut() {
        for e in povm.iter_mut() {
            *e = minv.tr_mul(e);
        }
    }
    Ok(out)
}

/// First-order change of the element vector under `M = 1 + K` for each unit
/// generator `K = e_a e_b^T` (column `a * d^2 + b`).
pub fn gauge_jacobian(gs: &GateSet) -> Mat {
    let n = gs.d2();
    let mut dq = Mat::zeros(gs.num_elements(), n * n);
    for a in 0..n {
        for b in 0..n {
            let col = a * n + b;
            let mut row = 0;
            // rho -> K rho : only entry a changes, by rho[b]
            for p in &gs.preps {
                dq[(row + a, col)] = p[b];
                row += n;
            }
            // G -> [K, G] : (K G)_{a,c} = G_{b,c}; (G K)_{r,b} = G_{r,a}
            for g in &gs.gates {
                for c in 0..n {
                    dq[(row + a * n + c, col)] += g[(b, c)];
                }
                for r in 0..n {
                    dq[(row + r * n + b, col)] -= g[(r, a)];
                }
                row += n * n;
            }
            // E -> -E K : entry b changes by -E[a]
            for povm in &gs.povms {
                for e in povm {
                    dq[(row + b, col)] = -e[a];
                    row += n;
                }
            }
        }
    }
    dq
}

#[derive(Clone, Debug)]
pub struct GaugeProjector {
    /// Orthogonal projector onto the gauge directions in parameter space.
    pub projector: Mat,
    /// Orthonormal basis of the gauge directions (columns).
    pub basis: Mat,
    pub rank: usize,
}

pub fn gauge_space_projector(gs: &GateSet, param: &Parameterization) -> Result<GaugeProjector> {
    let v = param.to_vector(gs)?;
    let dp = param.jacobian(&v)?;
    let dq = gauge_jacobian(gs);
    let np = dp.ncols();
    let mut both = Mat::zeros(dp.nrows(), np + dq.ncols());
    both.view_mut((0, 0), dp.shape()).copy_from(&dp);
    both.view_mut((0, np), dq.shape()).copy_from(&dq);
    let null = nullspace(&both, 1e-10);
    let p = null.rows(0, np).into_owned();
    let basis = range_basis(&p, 1e-8);
    let rank = basis.ncols();
    Ok(GaugeProjector {
        projector: &basis * basis.transpose(),
        basis,
        rank,
    })
}

pub fn num_nongauge_params(gs: &GateSet, param: &Parameterization) -> Result<usize> {
    Ok(param.num_params() - gauge_space_projector(gs, param)?.rank)
}
