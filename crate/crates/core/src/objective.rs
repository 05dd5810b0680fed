//! The least-squares objective `g(θ) = ‖Aφ(θ) − y‖₂²` with closed-form gradient
//! and Hessian, the latter split as `H = G + F` where every entry of `F`
//! carries the residual `Aφ(θ) − y`.

use std::io::Write;

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::measurement::{FourierOperator, MeasurementVector};
use crate::numeric::{norm2, pairwise_sum};
use crate::spike_model::{unpack, GeneralizedDipole, ModelConfig, SpikeTrain};

#[derive(Debug, Clone)]
pub struct Objective {
    operator: FourierOperator,
    data: MeasurementVector,
    config: ModelConfig,
}

#[derive(Debug, Clone, PartialEq)]
pub struct HessianSplit {
    pub g: DMatrix<f64>,
    pub f: DMatrix<f64>,
    pub h: DMatrix<f64>,
}

/// Per-spike samples `α_l(t_r)` and the residual, shared by all derivative entries.
struct Cache {
    alphas: Vec<Vec<Complex64>>,
    residual: Vec<Complex64>,
}

#[inline]
fn re_mul_conj(x: Complex64, y: Complex64) -> f64 {
    x.re * y.re + x.im * y.im
}

#[inline]
fn times_i(z: Complex64) -> Complex64 {
    Complex64::new(-z.im, z.re)
}

impl Objective {
    pub fn new(operator: FourierOperator, data: MeasurementVector, config: ModelConfig) -> Result<Self> {
        config.validate()?;
        if data.len() != operator.m() {
            return Err(Error::DimensionMismatch { expected: operator.m(), got: data.len() });
        }
        if config.d != operator.d() {
            return Err(Error::DimensionMismatch { expected: operator.d(), got: config.d });
        }
        Ok(Objective { operator, data, config })
    }

    /// Objective with noiseless data `y = Aφ(θ*)`.
    pub fn noiseless(operator: FourierOperator, truth: &SpikeTrain) -> Result<Self> {
        let y = operator.apply(truth)?;
        Self::new(operator, y, *truth.config())
    }

    pub fn operator(&self) -> &FourierOperator {
        &self.operator
    }

    pub fn data(&self) -> &MeasurementVector {
        &self.data
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    fn check(&self, theta: &SpikeTrain) -> Result<()> {
        if theta.k() != self.config.k || theta.d() != self.config.d {
            return Err(Error::DimensionMismatch { expected: self.config.dim(), got: theta.config().dim() });
        }
        Ok(())
    }

    fn cache(&self, theta: &SpikeTrain) -> Cache {
        let m = self.operator.m();
        let alphas: Vec<Vec<Complex64>> =
            theta.positions().map(|t| (0..m).map(|l| self.operator.alpha(l, t)).collect()).collect();
        let residual = (0..m)
            .map(|l| {
                let model: Complex64 = theta.amplitudes().iter().zip(&alphas).map(|(a, al)| al[l] * *a).sum();
                model - self.data.values[l]
            })
            .collect();
        Cache { alphas, residual }
    }

    /// `Aφ(θ) − y`.
    pub fn residual(&self, theta: &SpikeTrain) -> Result<MeasurementVector> {
        self.check(theta)?;
        Ok(MeasurementVector { values: self.cache(theta).residual })
    }

    pub fn eval(&self, theta: &SpikeTrain) -> Result<f64> {
        self.check(theta)?;
        let res = self.cache(theta).residual;
        Ok(pairwise_sum(res.len(), |l| res[l].norm_sqr()))
    }

    pub fn eval_packed(&self, theta: &[f64]) -> Result<f64> {
        self.eval(&unpack(&self.config, theta)?)
    }

    /// `∂g/∂a_r = 2 re⟨Aδ_{t_r}, r⟩`, `∂g/∂t_{r,j} = −2 a_r re⟨Aδ'_{t_r,e_j}, r⟩`
    /// with residual `r`, packed as `(a_1..a_k, t_1..t_k)`.
    pub fn gradient(&self, theta: &SpikeTrain) -> Result<Vec<f64>> {
        self.check(theta)?;
        Ok(self.gradient_with(theta, &self.cache(theta)))
    }

    /// Objective value and gradient from one pass.
    pub fn eval_and_gradient(&self, theta: &SpikeTrain) -> Result<(f64, Vec<f64>)> {
        self.check(theta)?;
        let cache = self.cache(theta);
        let res = &cache.residual;
        let value = pairwise_sum(res.len(), |l| res[l].norm_sqr());
        Ok((value, self.gradient_with(theta, &cache)))
    }

    fn gradient_with(&self, theta: &SpikeTrain, cache: &Cache) -> Vec<f64> {
        let (k, d, m) = (self.config.k, self.config.d, self.operator.m());
        let res = &cache.residual;
        let mut grad = vec![0.0; k * (d + 1)];
        for r in 0..k {
            let al = &cache.alphas[r];
            grad[r] = 2.0 * pairwise_sum(m, |l| re_mul_conj(al[l], res[l]));
            let a = theta.amplitude(r);
            for j in 0..d {
                let s = pairwise_sum(m, |l| {
                    let w = self.operator.frequency(l)[j];
                    re_mul_conj(times_i(al[l]) * w, res[l])
                });
                grad[k + r * d + j] = -2.0 * a * s;
            }
        }
        grad
    }

    pub fn gradient_packed(&self, theta: &[f64]) -> Result<Vec<f64>> {
        self.gradient(&unpack(&self.config, theta)?)
    }

    /// Hessian in packed coordinates with its `G + F` decomposition.
    pub fn hessian(&self, theta: &SpikeTrain) -> Result<HessianSplit> {
        self.check(theta)?;
        let (k, d, m) = (self.config.k, self.config.d, self.operator.m());
        let n = k * (d + 1);
        let cache = self.cache(theta);
        let (al, res) = (&cache.alphas, &cache.residual);
        let op = &self.operator;
        let pos = |r: usize, j: usize| k + r * d + j;
        let mut g = DMatrix::<f64>::zeros(n, n);
        let mut f = DMatrix::<f64>::zeros(n, n);

        for r in 0..k {
            let ar = theta.amplitude(r);
            for s in r..k {
                let as_ = theta.amplitude(s);
                // amplitude block
                let v = 2.0 * pairwise_sum(m, |l| re_mul_conj(al[r][l], al[s][l]));
                g[(r, s)] = v;
                g[(s, r)] = v;
                // position block: 2 a_r a_s re Σ ω_{j1} ω_{j2} α_r conj(α_s)
                for j1 in 0..d {
                    let j2_start = if r == s { j1 } else { 0 };
                    for j2 in j2_start..d {
                        let v = 2.0
                            * ar
                            * as_
                            * pairwise_sum(m, |l| {
                                let w = op.frequency(l);
                                w[j1] * w[j2] * re_mul_conj(al[r][l], al[s][l])
                            });
                        g[(pos(r, j1), pos(s, j2))] = v;
                        g[(pos(s, j2), pos(r, j1))] = v;
                    }
                }
            }
            // cross block: −2 a_s re⟨Aδ_{t_r}, Aδ'_{t_s,j}⟩
            for s in 0..k {
                let as_ = theta.amplitude(s);
                for j in 0..d {
                    let v = -2.0
                        * as_
                        * pairwise_sum(m, |l| re_mul_conj(al[r][l], times_i(al[s][l]) * op.frequency(l)[j]));
                    g[(r, pos(s, j))] = v;
                    g[(pos(s, j), r)] = v;
                }
            }
            // residual-coupled diagonal-spike terms
            for j in 0..d {
                let v = -2.0 * pairwise_sum(m, |l| re_mul_conj(times_i(al[r][l]) * op.frequency(l)[j], res[l]));
                f[(r, pos(r, j))] = v;
                f[(pos(r, j), r)] = v;
            }
            for j1 in 0..d {
                for j2 in j1..d {
                    let v = 2.0
                        * ar
                        * pairwise_sum(m, |l| {
                            let w = op.frequency(l);
                            re_mul_conj(al[r][l] * (-w[j1] * w[j2]), res[l])
                        });
                    f[(pos(r, j1), pos(r, j2))] = v;
                    f[(pos(r, j2), pos(r, j1))] = v;
                }
            }
        }
        let h = &g + &f;
        Ok(HessianSplit { g, f, h })
    }

    /// `uᵀGu` two ways: from the matrix, and as
    /// `2‖A Σ_r (u_r δ_{t_r} − a_r ‖u_{t_r}‖ δ'_{t_r, u_{t_r}/‖u_{t_r}‖})‖²`.
    pub fn quadratic_form_g_identity(&self, theta: &SpikeTrain, u: &[f64]) -> Result<(f64, f64)> {
        self.check(theta)?;
        let (k, d) = (self.config.k, self.config.d);
        if u.len() != k * (d + 1) {
            return Err(Error::DimensionMismatch { expected: k * (d + 1), got: u.len() });
        }
        let nu = norm2(u);
        if (nu - 1.0).abs() > 1e-9 {
            return Err(Error::NonUnitDirection { norm: nu });
        }
        let g = self.hessian(theta)?.g;
        let uv = DVector::from_column_slice(u);
        let via_matrix = (uv.transpose() * &g * &uv)[(0, 0)];

        let mut dipoles = Vec::with_capacity(k);
        for r in 0..k {
            let w = &u[k + r * d..k + (r + 1) * d];
            let nw = norm2(w);
            let (b, v) = if nw > 0.0 {
                (-theta.amplitude(r) * nw, w.iter().map(|x| x / nw).collect())
            } else {
                (0.0, vec![0.0; d])
            };
            dipoles.push(GeneralizedDipole { a: u[r], b, t: theta.position(r).to_vec(), v });
        }
        let direct = 2.0 * self.operator.apply_dipoles(&dipoles)?.norm_sq();
        Ok((via_matrix, direct))
    }
}

/// Writes a packed-coordinate matrix as CSV, row-major, with a header naming
/// each column (`a{r}` for amplitudes, `t{r}_{j}` for positions).
pub fn write_matrix_csv<W: Write>(mut w: W, matrix: &DMatrix<f64>, k: usize, d: usize) -> Result<()> {
    let n = k * (d + 1);
    if matrix.nrows() != n || matrix.ncols() != n {
        return Err(Error::DimensionMismatch { expected: n, got: matrix.nrows() });
    }
    let mut names: Vec<String> = (0..k).map(|r| format!("a{r}")).collect();
    for r in 0..k {
        for j in 0..d {
            names.push(format!("t{r}_{j}"));
        }
    }
    writeln!(w, "# amplitude block 0..{k}, position block {k}..{n}")?;
    writeln!(w, "{}", names.join(","))?;
    for i in 0..n {
        let row: Vec<String> = (0..n).map(|j| format!("{:e}", matrix[(i, j)])).collect();
        writeln!(w, "{}", row.join(","))?;
    }
    Ok(())
}
