//! REML estimation for the working linear mixed model that the
//! quasi-likelihood outer loop linearizes to.
//!
//! The model is `y = X beta + Z b + e` with fixed diagonal residual
//! precision `W` (the binomial working weights) and `b ~ N(0, G)`,
//! `G = blockdiag(sigma_j^2 I)`. Everything the restricted likelihood
//! needs is a function of the cross-products `M = C' W C`, `u = C' W y`
//! and `s = y' W y` with `C = [X Z]`, so a profile evaluation costs
//! `O(q^3)` regardless of the number of cells.

use nalgebra::{Cholesky, DMatrix, DVector};
use std::ops::Range;

use crate::error::Error;
use crate::Result;

/// Smallest admissible variance component.
pub const VAR_FLOOR: f64 = 1e-10;
const LOG_VAR_LO: f64 = -23.025850929940457; // ln(1e-10)
const LOG_VAR_HI: f64 = 13.815510557964274; // ln(1e6)

pub struct WorkingLmm<'a> {
    c: &'a DMatrix<f64>,
    p: usize,
    blocks: &'a [Range<usize>],
    m: DMatrix<f64>,
    u: DVector<f64>,
    s: f64,
    logdet_w: f64,
}

pub struct LmmSolution {
    pub beta: DVector<f64>,
    pub b: DVector<f64>,
    /// Cholesky factor of the coefficient matrix `C' W C + blockdiag(0, G^{-1})`.
    pub chol: Cholesky<f64, nalgebra::Dyn>,
}

impl<'a> WorkingLmm<'a> {
    /// Assemble cross-products for the current pseudo-data.
    ///
    /// Rows with zero weight (empty cells) drop out of every statistic.
    pub fn new(
        c: &'a DMatrix<f64>,
        p: usize,
        blocks: &'a [Range<usize>],
        weights: &DVector<f64>,
        y: &DVector<f64>,
    ) -> Self {
        let n = c.nrows();
        debug_assert_eq!(weights.len(), n);
        debug_assert_eq!(y.len(), n);

        // scale rows by sqrt(w); zero-weight rows drop out of everything
        let mut cw = c.clone();
        let mut yw = DVector::zeros(n);
        let mut logdet_w = 0.0;
        for i in 0..n {
            let w = weights[i];
            if w > 0.0 {
                let sw = w.sqrt();
                cw.row_mut(i).scale_mut(sw);
                yw[i] = sw * y[i];
                logdet_w += w.ln();
            } else {
                cw.row_mut(i).fill(0.0);
            }
        }
        let m = cw.transpose() * &cw;
        let u = cw.transpose() * &yw;
        let s = yw.dot(&yw);
        WorkingLmm {
            c,
            p,
            blocks,
            m,
            u,
            s,
            logdet_w,
        }
    }

    fn q(&self) -> usize {
        self.c.ncols() - self.p
    }

    /// Negative restricted log-likelihood (constants dropped); `+inf`
    /// when the implied system is not positive definite.
    pub fn neg_reml(&self, sigma2: &[f64]) -> f64 {
        let p = self.p;
        let q = self.q();
        debug_assert_eq!(sigma2.len(), self.blocks.len());

        let mut logdet_g = 0.0;
        let mut t = self.m.view((p, p), (q, q)).into_owned();
        for (j, range) in self.blocks.iter().enumerate() {
            let inv = 1.0 / sigma2[j];
            logdet_g += range.len() as f64 * sigma2[j].ln();
            for k in range.clone() {
                t[(k, k)] += inv;
            }
        }
        let chol_t = match Cholesky::new(t) {
            Some(c) => c,
            None => return f64::INFINITY,
        };
        let logdet_t = 2.0
            * chol_t
                .l_dirty()
                .diagonal()
                .iter()
                .map(|d| d.ln())
                .sum::<f64>();

        // solve T \ [M_zx u_z] in one pass
        let mut rhs = DMatrix::zeros(q, p + 1);
        rhs.view_mut((0, 0), (q, p))
            .copy_from(&self.m.view((p, 0), (q, p)));
        rhs.view_mut((0, p), (q, 1)).copy_from(&self.u.rows(p, q));
        chol_t.solve_mut(&mut rhs);

        let m_xz = self.m.view((0, p), (p, q));
        let s_xx = self.m.view((0, 0), (p, p)) - &m_xz * rhs.view((0, 0), (q, p));
        let r_x = self.u.rows(0, p) - &m_xz * rhs.view((0, p), (q, 1));
        let quad_z: f64 = self.u.rows(p, q).dot(&rhs.column(p));

        let chol_s = match Cholesky::new(s_xx) {
            Some(c) => c,
            None => return f64::INFINITY,
        };
        let logdet_s = 2.0
            * chol_s
                .l_dirty()
                .diagonal()
                .iter()
                .map(|d| d.ln())
                .sum::<f64>();
        let beta = chol_s.solve(&r_x);
        let quad = self.s - quad_z - r_x.dot(&beta);

        let logdet_v = -self.logdet_w + logdet_g + logdet_t;
        0.5 * (logdet_v + logdet_s + quad)
    }

    /// Henderson solutions `(beta, b)` at the given variance components.
    pub fn solve(&self, sigma2: &[f64]) -> Result<LmmSolution> {
        let p = self.p;
        let mut a = self.m.clone();
        for (j, range) in self.blocks.iter().enumerate() {
            let inv = 1.0 / sigma2[j];
            for k in range.clone() {
                a[(p + k, p + k)] += inv;
            }
        }
        let chol = Cholesky::new(a).ok_or_else(|| {
            Error::NumericalBreakdown("singular working mixed-model system".into())
        })?;
        let sol = chol.solve(&self.u);
        Ok(LmmSolution {
            beta: sol.rows(0, p).into_owned(),
            b: sol.rows(p, self.q()).into_owned(),
            chol,
        })
    }

    /// Maximize the restricted likelihood over the variance components.
    ///
    /// Cyclic golden-section sweeps on the log scale; a coarse scan seeds
    /// cold starts. `tol` is the resolution on `ln(sigma^2)`.
    /// Deterministic for identical inputs.
    pub fn optimize(&self, start: &[f64], warm: bool, tol: f64) -> Vec<f64> {
        let j = self.blocks.len();
        if j == 0 {
            return Vec::new();
        }
        let mut rho: Vec<f64> = start
            .iter()
            .map(|&s| s.max(VAR_FLOOR).ln().clamp(LOG_VAR_LO, LOG_VAR_HI))
            .collect();

        if !warm {
            // coarse scan per coordinate to land in the right basin
            for coord in 0..j {
                let mut best = (rho[coord], self.eval_coord(&rho, coord, rho[coord]));
                let steps = 24;
                for i in 0..=steps {
                    let cand = LOG_VAR_LO + (LOG_VAR_HI - LOG_VAR_LO) * i as f64 / steps as f64;
                    let f = self.eval_coord(&rho, coord, cand);
                    if f < best.1 {
                        best = (cand, f);
                    }
                }
                rho[coord] = best.0;
            }
        }

        let mut window = vec![if warm { 0.5 } else { 2.0 }; j];
        for _sweep in 0..40 {
            let mut max_delta = 0.0f64;
            for coord in 0..j {
                let old = rho[coord];
                let f_old = self.eval_coord(&rho, coord, old);
                let (new, f_new) = self.golden_coord(&rho, coord, window[coord], tol);
                // move only on a real improvement; a flat restricted
                // likelihood (block nested in the fixed design) must not
                // let the component wander
                if f_new < f_old - 1e-11 * (1.0 + f_old.abs()) {
                    rho[coord] = new;
                    let delta = (new - old).abs();
                    max_delta = max_delta.max(delta);
                    window[coord] = (delta * 4.0).clamp(8.0 * tol, 2.0);
                } else {
                    window[coord] = (window[coord] * 0.5).max(8.0 * tol);
                }
            }
            if max_delta < tol {
                break;
            }
        }
        rho.iter().map(|r| r.exp()).collect()
    }

    fn eval_coord(&self, rho: &[f64], coord: usize, value: f64) -> f64 {
        let mut sigma2: Vec<f64> = rho.iter().map(|r| r.exp()).collect();
        sigma2[coord] = value.exp();
        self.neg_reml(&sigma2)
    }

    /// Golden-section minimization in one coordinate, expanding the
    /// window whenever the minimum lands on its edge.
    fn golden_coord(&self, rho: &[f64], coord: usize, window: f64, tol: f64) -> (f64, f64) {
        let mut lo = (rho[coord] - window).max(LOG_VAR_LO);
        let mut hi = (rho[coord] + window).min(LOG_VAR_HI);
        for _ in 0..12 {
            let (x, fx) = self.golden_section(rho, coord, lo, hi, tol);
            let width = hi - lo;
            let at_lo = x - lo < 1e-6 * width && lo > LOG_VAR_LO;
            let at_hi = hi - x < 1e-6 * width && hi < LOG_VAR_HI;
            if at_lo {
                lo = (lo - 2.0 * width).max(LOG_VAR_LO);
                hi = x + 0.1 * width;
            } else if at_hi {
                hi = (hi + 2.0 * width).min(LOG_VAR_HI);
                lo = x - 0.1 * width;
            } else {
                return (x, fx);
            }
        }
        self.golden_section(rho, coord, lo, hi, tol)
    }

    fn golden_section(
        &self,
        rho: &[f64],
        coord: usize,
        mut lo: f64,
        mut hi: f64,
        tol: f64,
    ) -> (f64, f64) {
        const INV_PHI: f64 = 0.618_033_988_749_894_9;
        let mut c = hi - INV_PHI * (hi - lo);
        let mut d = lo + INV_PHI * (hi - lo);
        let mut fc = self.eval_coord(rho, coord, c);
        let mut fd = self.eval_coord(rho, coord, d);
        while hi - lo > tol {
            if fc < fd {
                hi = d;
                d = c;
                fd = fc;
                c = hi - INV_PHI * (hi - lo);
                fc = self.eval_coord(rho, coord, c);
            } else {
                lo = c;
                c = d;
                fc = fd;
                d = lo + INV_PHI * (hi - lo);
                fd = self.eval_coord(rho, coord, d);
            }
        }
        if fc < fd {
            (c, fc)
        } else {
            (d, fd)
        }
    }
}
