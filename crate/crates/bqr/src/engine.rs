//! Gibbs sampler for Bayesian geoadditive quantile regression.
//!
//! The working likelihood is the asymmetric Laplace distribution with
//! location equal to the linear predictor, so the posterior mode of the
//! location targets the tau-quantile. The ALD error admits the mixture
//! representation
//!
//! ```text
//! eps_i = xi * w_i + kappa * sqrt(sigma * w_i) * z_i,
//! w_i ~ Exp(mean sigma), z_i ~ N(0, 1),
//! xi = (1 - 2 tau) / (tau (1 - tau)), kappa^2 = 2 / (tau (1 - tau)),
//! ```
//!
//! which makes every full conditional closed form: generalized inverse
//! Gaussian for the latent weights, multivariate Gaussian for each
//! coefficient block, and inverse gamma for the variance parameters and
//! the ALD scale.
//!
//! Identifiability: smooth and spatial blocks carry improper (rank
//! deficient) priors, so each is recentered every sweep — smooth blocks
//! to mean-zero fitted values, spatial blocks to mean zero per connected
//! component — with the removed level absorbed into the intercept.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use rand_distr::{Distribution, Gamma, InverseGaussian, StandardNormal};

use crate::basis::{self, PenaltyMatrix, SplineBasis};
use crate::graph::{precision_matrix, GmrfPrecision, RegionGraph};
use crate::ingest::{sample_quantile, Dataset, StandardizationReport};
use crate::{Error, Result};

/// Lower clamp applied to the GIG chi parameter and to inverse-gamma
/// draws so the latent scales stay strictly positive and finite.
const CHI_FLOOR: f64 = 1e-10;
const VARIANCE_FLOOR: f64 = 1e-12;
const JITTER: f64 = 1e-8;

/// MCMC schedule.
#[derive(Debug, Clone, PartialEq)]
pub struct McmcConfig {
    pub iterations: usize,
    pub burn_in: usize,
    pub thin: usize,
    pub seed: u64,
}

impl Default for McmcConfig {
    fn default() -> Self {
        McmcConfig {
            iterations: 52_000,
            burn_in: 2_000,
            thin: 50,
            seed: 58_581,
        }
    }
}

impl McmcConfig {
    /// Number of draws the schedule retains.
    pub fn stored_count(&self) -> usize {
        (self.iterations.saturating_sub(self.burn_in)) / self.thin.max(1)
    }
}

/// A P-spline smooth term on one covariate.
#[derive(Debug, Clone, PartialEq)]
pub struct SmoothTermSpec {
    pub column: String,
    pub n_basis: usize,
    pub degree: usize,
    pub penalty_order: usize,
}

impl SmoothTermSpec {
    pub fn new(column: impl Into<String>) -> Self {
        SmoothTermSpec {
            column: column.into(),
            n_basis: 22,
            degree: 3,
            penalty_order: 2,
        }
    }
}

/// A GMRF spatial term over the regions of a [`RegionGraph`].
#[derive(Debug, Clone, PartialEq)]
pub struct SpatialTermSpec {
    pub region_column: String,
}

/// Full model description: response, linear, smooth, and spatial terms,
/// the quantile of interest, and the sampler schedule.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelSpec {
    pub response: String,
    pub linear: Vec<String>,
    pub smooth: Vec<SmoothTermSpec>,
    pub spatial: Option<SpatialTermSpec>,
    pub tau: f64,
    pub mcmc: McmcConfig,
    /// Inverse gamma (shape, rate) for random-walk and spatial variances.
    pub variance_prior: (f64, f64),
    /// Inverse gamma (shape, rate) for the ALD scale.
    pub scale_prior: (f64, f64),
}

impl ModelSpec {
    pub fn new(response: impl Into<String>, tau: f64) -> Self {
        ModelSpec {
            response: response.into(),
            linear: Vec::new(),
            smooth: Vec::new(),
            spatial: None,
            tau,
            mcmc: McmcConfig::default(),
            variance_prior: (0.001, 0.001),
            scale_prior: (0.001, 0.001),
        }
    }
}

/// Posterior summary of one scalar parameter.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Summary {
    pub mean: f64,
    pub lower: f64,
    pub upper: f64,
    pub significant: bool,
}

/// Grid-evaluated posterior mean and 95% band of a smooth effect.
#[derive(Debug, Clone, PartialEq)]
pub struct EffectCurve {
    pub grid: Vec<f64>,
    pub mean: Vec<f64>,
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
}

/// Per-region posterior summary of the spatial effect.
#[derive(Debug, Clone, PartialEq)]
pub struct SpatialEffect {
    pub label: String,
    pub mean: f64,
    pub lower: f64,
    pub upper: f64,
    pub significant: bool,
}

/// DIC decomposition.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DicSummary {
    pub mean_deviance: f64,
    pub plugin_deviance: f64,
    pub effective_params: f64,
    pub dic: f64,
}

/// Stored draws for one smooth term.
#[derive(Debug, Clone)]
pub struct SmoothFit {
    pub column: String,
    pub basis: SplineBasis,
    /// stored x m coefficient draws.
    pub coef_draws: Vec<Vec<f64>>,
    pub variance_draws: Vec<f64>,
}

/// Stored draws for the spatial term.
#[derive(Debug, Clone)]
pub struct SpatialFit {
    pub region_column: String,
    pub labels: Vec<String>,
    /// stored x R effect draws, in label order.
    pub effect_draws: Vec<Vec<f64>>,
    pub variance_draws: Vec<f64>,
    pub components: Vec<Vec<usize>>,
}

/// Everything the sampler retains: thinned post-burn-in draws, the
/// deviance trace, and the posterior-mean linear predictor.
#[derive(Debug, Clone)]
pub struct FitResult {
    pub spec: ModelSpec,
    /// Intercept first, then the linear covariates in spec order.
    pub linear_names: Vec<String>,
    pub linear_draws: Vec<Vec<f64>>,
    pub smooth: Vec<SmoothFit>,
    pub spatial: Option<SpatialFit>,
    pub sigma_draws: Vec<f64>,
    pub deviance_draws: Vec<f64>,
    pub mean_eta: Vec<f64>,
    pub response: Vec<f64>,
    pub standardization: Option<StandardizationReport>,
}

impl FitResult {
    pub fn stored_count(&self) -> usize {
        self.sigma_draws.len()
    }

    /// Fraction of observations lying below the posterior-mean linear
    /// predictor; calibrated fits put this near tau.
    pub fn fraction_below_fit(&self) -> f64 {
        let below = self
            .response
            .iter()
            .zip(&self.mean_eta)
            .filter(|(y, eta)| y < eta)
            .count();
        below as f64 / self.response.len() as f64
    }

    /// Draws of the named linear coefficient.
    pub fn linear_coef_draws(&self, name: &str) -> Result<Vec<f64>> {
        let idx = self
            .linear_names
            .iter()
            .position(|n| n == name)
            .ok_or_else(|| Error::UnknownColumn(name.to_string()))?;
        Ok(self.linear_draws.iter().map(|d| d[idx]).collect())
    }
}

/// Check loss rho_tau(u) = u (tau - 1{u < 0}); its population minimizer
/// is the tau-quantile.
pub fn check_loss(u: f64, tau: f64) -> f64 {
    if u >= 0.0 {
        u * tau
    } else {
        u * (tau - 1.0)
    }
}

/// Log density of the asymmetric Laplace working likelihood:
/// log(tau (1 - tau) / sigma) - rho_tau(y - eta) / sigma.
pub fn ald_logdensity(y: f64, eta: f64, sigma: f64, tau: f64) -> Result<f64> {
    if sigma <= 0.0 {
        return Err(Error::InvalidArgument(format!(
            "ALD scale must be positive, got {sigma}"
        )));
    }
    Ok((tau * (1.0 - tau) / sigma).ln() - check_loss(y - eta, tau) / sigma)
}

/// Mixture constants for a given quantile.
fn mixture_constants(tau: f64) -> (f64, f64) {
    let xi = (1.0 - 2.0 * tau) / (tau * (1.0 - tau));
    let kappa2 = 2.0 / (tau * (1.0 - tau));
    (xi, kappa2)
}

/// Draw one latent mixture weight from its GIG(1/2, chi, psi) full
/// conditional, via its inverse-Gaussian reciprocal.
pub fn sample_latent_weight<R: Rng>(
    residual: f64,
    sigma: f64,
    tau: f64,
    rng: &mut R,
) -> Result<f64> {
    if !residual.is_finite() {
        return Err(Error::NonFinite);
    }
    if sigma <= 0.0 {
        return Err(Error::InvalidArgument(format!(
            "ALD scale must be positive, got {sigma}"
        )));
    }
    let (xi, kappa2) = mixture_constants(tau);
    let chi = (residual * residual / (kappa2 * sigma)).max(CHI_FLOOR);
    let psi = xi * xi / (kappa2 * sigma) + 2.0 / sigma;
    let ig = InverseGaussian::new((psi / chi).sqrt(), psi)
        .map_err(|e| Error::InvalidArgument(format!("inverse Gaussian parameters: {e}")))?;
    let v: f64 = ig.sample(rng);
    Ok((1.0 / v).max(VARIANCE_FLOOR))
}

fn cholesky_with_jitter(precision: &DMatrix<f64>) -> Result<nalgebra::Cholesky<f64, nalgebra::Dyn>> {
    if let Some(chol) = precision.clone().cholesky() {
        return Ok(chol);
    }
    let dim = precision.nrows();
    let jittered = precision + DMatrix::identity(dim, dim) * JITTER;
    jittered.cholesky().ok_or(Error::NotPositiveDefinite)
}

/// Deterministic core of the Gaussian block draw: with standard-normal
/// noise `z`, returns P^{-1} b + L^{-T} z where P = L L'.
pub fn gaussian_block_from_noise(
    precision: &DMatrix<f64>,
    linear_term: &DVector<f64>,
    z: &DVector<f64>,
) -> Result<DVector<f64>> {
    let chol = cholesky_with_jitter(precision)?;
    let mean = chol.solve(linear_term);
    let l = chol.l();
    let noise = l
        .transpose()
        .solve_upper_triangular(z)
        .ok_or(Error::NotPositiveDefinite)?;
    Ok(mean + noise)
}

/// Draw from the Gaussian with precision matrix `precision` and mean
/// `precision^{-1} linear_term`.
pub fn sample_gaussian_block<R: Rng>(
    precision: &DMatrix<f64>,
    linear_term: &DVector<f64>,
    rng: &mut R,
) -> Result<DVector<f64>> {
    let z = DVector::from_fn(precision.nrows(), |_, _| {
        StandardNormal.sample(rng)
    });
    gaussian_block_from_noise(precision, linear_term, &z)
}

fn sample_inverse_gamma<R: Rng>(shape: f64, rate: f64, rng: &mut R) -> f64 {
    let g: f64 = Gamma::new(shape, 1.0)
        .expect("positive inverse-gamma shape")
        .sample(rng);
    (rate / g.max(f64::MIN_POSITIVE)).max(VARIANCE_FLOOR)
}

/// Posterior mean and empirical 95% credible interval of a draw vector;
/// significant iff 0 lies outside the interval.
pub fn summarize(draws: &[f64]) -> Result<Summary> {
    if draws.is_empty() {
        return Err(Error::EmptySample("summarize"));
    }
    let mean = draws.iter().sum::<f64>() / draws.len() as f64;
    let lower = sample_quantile(draws, 0.025)?;
    let upper = sample_quantile(draws, 0.975)?;
    Ok(Summary {
        mean,
        lower,
        upper,
        significant: lower > 0.0 || upper < 0.0,
    })
}

/// Sparse row layout of a smooth design matrix: per observation the
/// first active basis index and the degree+1 active values.
struct SparseDesign {
    rows: Vec<(usize, Vec<f64>)>,
    n_basis: usize,
}

impl SparseDesign {
    fn build(x: &[f64], basis: &SplineBasis) -> Result<Self> {
        let mut rows = Vec::with_capacity(x.len());
        for &xi in x {
            rows.push(basis.evaluate(xi)?);
        }
        Ok(SparseDesign {
            rows,
            n_basis: basis.n_basis(),
        })
    }

    fn fitted(&self, coef: &DVector<f64>, out: &mut [f64]) {
        for (i, (first, values)) in self.rows.iter().enumerate() {
            let mut acc = 0.0;
            for (k, v) in values.iter().enumerate() {
                acc += v * coef[first + k];
            }
            out[i] = acc;
        }
    }

    /// Accumulate B' Lambda B and B' Lambda t.
    fn normal_equations(
        &self,
        lambda: &[f64],
        target: &[f64],
        precision: &mut DMatrix<f64>,
        linear: &mut DVector<f64>,
    ) {
        precision.fill(0.0);
        linear.fill(0.0);
        for (i, (first, values)) in self.rows.iter().enumerate() {
            let li = lambda[i];
            let ti = target[i];
            for (a, va) in values.iter().enumerate() {
                linear[first + a] += li * va * ti;
                for (b, vb) in values.iter().enumerate().skip(a) {
                    precision[(first + a, first + b)] += li * va * vb;
                }
            }
        }
        // mirror the upper triangle
        for a in 0..self.n_basis {
            for b in (a + 1)..self.n_basis {
                precision[(b, a)] = precision[(a, b)];
            }
        }
    }
}

struct SmoothBlock {
    spec: SmoothTermSpec,
    basis: SplineBasis,
    design: SparseDesign,
    penalty: PenaltyMatrix,
    coef: DVector<f64>,
    fitted: Vec<f64>,
    variance: f64,
}

struct SpatialBlock {
    spec: SpatialTermSpec,
    labels: Vec<String>,
    region_of_obs: Vec<usize>,
    gmrf: GmrfPrecision,
    q_dense: DMatrix<f64>,
    effects: DVector<f64>,
    fitted: Vec<f64>,
    variance: f64,
}

fn validate_spec(d: &Dataset, g: Option<&RegionGraph>, spec: &ModelSpec) -> Result<()> {
    if !(spec.tau > 0.0 && spec.tau < 1.0) {
        return Err(Error::InvalidModel(format!(
            "quantile must lie strictly inside (0, 1), got {}",
            spec.tau
        )));
    }
    if spec.mcmc.burn_in >= spec.mcmc.iterations {
        return Err(Error::InvalidModel(format!(
            "burn-in {} must be smaller than total iterations {}",
            spec.mcmc.burn_in, spec.mcmc.iterations
        )));
    }
    if spec.mcmc.thin == 0 {
        return Err(Error::InvalidModel("thinning stride must be >= 1".into()));
    }
    d.column(&spec.response)?;
    for name in &spec.linear {
        d.column(name)?;
    }
    for term in &spec.smooth {
        d.column(&term.column)?;
    }
    if let Some(sp) = &spec.spatial {
        d.column(&sp.region_column)?;
        if g.is_none() {
            return Err(Error::InvalidModel(
                "spatial term requested but no region graph supplied".into(),
            ));
        }
    }
    Ok(())
}

/// Fit the model by Gibbs sampling. The dataset is expected to already
/// be standardized when a [`StandardizationReport`] is passed along; the
/// report only rides through to the result for back-transformation.
pub fn fit(
    d: &Dataset,
    g: Option<&RegionGraph>,
    spec: &ModelSpec,
    standardization: Option<StandardizationReport>,
) -> Result<FitResult> {
    validate_spec(d, g, spec)?;
    let n = d.n_rows();
    let y = d.column(&spec.response)?.to_vec();
    let tau = spec.tau;
    let (xi, kappa2) = mixture_constants(tau);

    // linear design: intercept column plus covariates
    let p_lin = 1 + spec.linear.len();
    let mut x_lin = DMatrix::zeros(n, p_lin);
    for i in 0..n {
        x_lin[(i, 0)] = 1.0;
    }
    for (k, name) in spec.linear.iter().enumerate() {
        let col = d.column(name)?;
        for i in 0..n {
            x_lin[(i, k + 1)] = col[i];
        }
    }
    let mut linear_names = vec!["intercept".to_string()];
    linear_names.extend(spec.linear.iter().cloned());

    // smooth blocks: basis fixed to the observed covariate range
    let mut smooths = Vec::with_capacity(spec.smooth.len());
    for term in &spec.smooth {
        let x = d.column(&term.column)?;
        let (min, max) = x
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| {
                (lo.min(v), hi.max(v))
            });
        let basis = basis::knot_sequence(min, max, term.n_basis, term.degree)?;
        let design = SparseDesign::build(x, &basis)?;
        let penalty = basis::difference_penalty(term.n_basis, term.penalty_order)?;
        smooths.push(SmoothBlock {
            spec: term.clone(),
            coef: DVector::zeros(term.n_basis),
            fitted: vec![0.0; n],
            variance: 1.0,
            basis,
            design,
            penalty,
        });
    }

    // spatial block: map region values onto graph label positions
    let mut spatial = match (&spec.spatial, g) {
        (Some(sp), Some(graph)) => {
            let mut dd = d.clone();
            dd.set_region_column(&sp.region_column)?;
            let values = dd.region_values()?;
            let index_of: std::collections::HashMap<&str, usize> = graph
                .labels()
                .iter()
                .enumerate()
                .map(|(i, l)| (l.as_str(), i))
                .collect();
            let mut region_of_obs = Vec::with_capacity(n);
            for v in values {
                let key = v.to_string();
                let idx = index_of
                    .get(key.as_str())
                    .copied()
                    .ok_or(Error::RegionNotInGraph(v))?;
                region_of_obs.push(idx);
            }
            let gmrf = precision_matrix(graph);
            let q_dense = gmrf.to_dense();
            Some(SpatialBlock {
                spec: sp.clone(),
                labels: graph.labels().to_vec(),
                effects: DVector::zeros(graph.n_regions()),
                fitted: vec![0.0; n],
                variance: 1.0,
                region_of_obs,
                gmrf,
                q_dense,
            })
        }
        _ => None,
    };

    let mut rng = ChaCha20Rng::seed_from_u64(spec.mcmc.seed);

    // deterministic scale-free start: intercept at the empirical
    // tau-quantile, everything else flat
    let mut beta = DVector::zeros(p_lin);
    beta[0] = sample_quantile(&y, tau)?;
    let mut fitted_lin: Vec<f64> = (0..n).map(|i| (x_lin.row(i) * &beta)[(0, 0)]).collect();
    let mut w = vec![1.0f64; n];
    let mut sigma = 1.0f64;

    let stored_total = spec.mcmc.stored_count();
    let mut linear_draws = Vec::with_capacity(stored_total);
    let mut smooth_draws: Vec<Vec<Vec<f64>>> = vec![Vec::with_capacity(stored_total); smooths.len()];
    let mut smooth_var_draws: Vec<Vec<f64>> = vec![Vec::with_capacity(stored_total); smooths.len()];
    let mut spatial_draws: Vec<Vec<f64>> = Vec::with_capacity(stored_total);
    let mut spatial_var_draws: Vec<f64> = Vec::with_capacity(stored_total);
    let mut sigma_draws = Vec::with_capacity(stored_total);
    let mut deviance_draws = Vec::with_capacity(stored_total);
    let mut eta_sum = vec![0.0f64; n];

    let mut eta = vec![0.0f64; n];
    let mut lambda = vec![0.0f64; n];
    let mut target = vec![0.0f64; n];

    for it in 1..=spec.mcmc.iterations {
        // current predictor
        for i in 0..n {
            let mut e = fitted_lin[i];
            for sb in &smooths {
                e += sb.fitted[i];
            }
            if let Some(sp) = &spatial {
                e += sp.fitted[i];
            }
            eta[i] = e;
        }

        // (1) latent mixture weights
        for i in 0..n {
            w[i] = sample_latent_weight(y[i] - eta[i], sigma, tau, &mut rng)?;
        }
        for i in 0..n {
            lambda[i] = 1.0 / (kappa2 * sigma * w[i]);
        }

        // (2) linear block under a flat prior
        for i in 0..n {
            target[i] = y[i] - xi * w[i] - (eta[i] - fitted_lin[i]);
        }
        let mut precision = DMatrix::zeros(p_lin, p_lin);
        let mut linear_term = DVector::zeros(p_lin);
        for i in 0..n {
            let li = lambda[i];
            let ti = target[i];
            for a in 0..p_lin {
                let xa = x_lin[(i, a)];
                linear_term[a] += li * xa * ti;
                for b in a..p_lin {
                    precision[(a, b)] += li * xa * x_lin[(i, b)];
                }
            }
        }
        for a in 0..p_lin {
            for b in (a + 1)..p_lin {
                precision[(b, a)] = precision[(a, b)];
            }
        }
        beta = sample_gaussian_block(&precision, &linear_term, &mut rng)?;
        for i in 0..n {
            let mut acc = 0.0;
            for a in 0..p_lin {
                acc += x_lin[(i, a)] * beta[a];
            }
            fitted_lin[i] = acc;
            eta[i] = acc;
            for sb in &smooths {
                eta[i] += sb.fitted[i];
            }
            if let Some(sp) = &spatial {
                eta[i] += sp.fitted[i];
            }
        }

        // (2)/(3) smooth blocks with random-walk priors, recentered
        for k in 0..smooths.len() {
            for i in 0..n {
                target[i] = y[i] - xi * w[i] - (eta[i] - smooths[k].fitted[i]);
            }
            let m = smooths[k].spec.n_basis;
            let mut prec = DMatrix::zeros(m, m);
            let mut lin = DVector::zeros(m);
            smooths[k]
                .design
                .normal_equations(&lambda, &target, &mut prec, &mut lin);
            let prior_scale = 1.0 / smooths[k].variance;
            prec += smooths[k].penalty.matrix() * prior_scale;
            let gamma = sample_gaussian_block(&prec, &lin, &mut rng)?;
            smooths[k].coef = gamma;
            let mut fitted = std::mem::take(&mut smooths[k].fitted);
            smooths[k].design.fitted(&smooths[k].coef, &mut fitted);
            // sum-to-zero centering over fitted values; by partition of
            // unity a constant shift of the coefficients shifts the
            // fitted values by the same constant
            let level = fitted.iter().sum::<f64>() / n as f64;
            for f in fitted.iter_mut() {
                *f -= level;
            }
            for c in smooths[k].coef.iter_mut() {
                *c -= level;
            }
            smooths[k].fitted = fitted;
            beta[0] += level;
            for i in 0..n {
                fitted_lin[i] += level;
                eta[i] = fitted_lin[i];
                for sb in &smooths {
                    eta[i] += sb.fitted[i];
                }
                if let Some(sp) = &spatial {
                    eta[i] += sp.fitted[i];
                }
            }
        }

        // (2)/(3) spatial block with GMRF prior, recentered per
        // connected component
        if let Some(sp) = spatial.as_mut() {
            let r = sp.gmrf.dimension();
            for i in 0..n {
                target[i] = y[i] - xi * w[i] - (eta[i] - sp.fitted[i]);
            }
            let prior_scale = 1.0 / sp.variance;
            let mut prec = &sp.q_dense * prior_scale;
            let mut lin = DVector::zeros(r);
            for i in 0..n {
                let reg = sp.region_of_obs[i];
                prec[(reg, reg)] += lambda[i];
                lin[reg] += lambda[i] * target[i];
            }
            sp.effects = sample_gaussian_block(&prec, &lin, &mut rng)?;
            // per-component sum-to-zero, observation-weighted level into
            // the intercept
            let mut removed = vec![0.0f64; r];
            for comp in sp.gmrf.components() {
                let level = comp.iter().map(|&j| sp.effects[j]).sum::<f64>() / comp.len() as f64;
                for &j in comp {
                    sp.effects[j] -= level;
                    removed[j] = level;
                }
            }
            let shift =
                sp.region_of_obs.iter().map(|&reg| removed[reg]).sum::<f64>() / n as f64;
            for i in 0..n {
                sp.fitted[i] = sp.effects[sp.region_of_obs[i]];
            }
            beta[0] += shift;
            for i in 0..n {
                fitted_lin[i] += shift;
                eta[i] = fitted_lin[i] + sp.fitted[i];
                for sb in &smooths {
                    eta[i] += sb.fitted[i];
                }
            }
        }

        // (4) smoothing variances
        let (a_var, b_var) = spec.variance_prior;
        for sb in smooths.iter_mut() {
            let coefs: Vec<f64> = sb.coef.iter().copied().collect();
            let quad = sb.penalty.quadratic_form(&coefs);
            sb.variance = sample_inverse_gamma(
                a_var + sb.penalty.rank() as f64 / 2.0,
                b_var + quad / 2.0,
                &mut rng,
            );
        }
        if let Some(sp) = spatial.as_mut() {
            let effects: Vec<f64> = sp.effects.iter().copied().collect();
            let quad = sp.gmrf.quadratic_form(&effects);
            sp.variance = sample_inverse_gamma(
                a_var + sp.gmrf.rank() as f64 / 2.0,
                b_var + quad / 2.0,
                &mut rng,
            );
        }

        // (5) ALD scale
        let (a_scale, b_scale) = spec.scale_prior;
        let mut rate = b_scale;
        for i in 0..n {
            let resid = y[i] - eta[i] - xi * w[i];
            rate += w[i] + resid * resid / (2.0 * kappa2 * w[i]);
        }
        sigma = sample_inverse_gamma(a_scale + 1.5 * n as f64, rate, &mut rng);

        // (6) record thinned post-burn-in draws
        if it > spec.mcmc.burn_in && (it - spec.mcmc.burn_in) % spec.mcmc.thin == 0 {
            linear_draws.push(beta.iter().copied().collect::<Vec<f64>>());
            for (k, sb) in smooths.iter().enumerate() {
                smooth_draws[k].push(sb.coef.iter().copied().collect());
                smooth_var_draws[k].push(sb.variance);
            }
            if let Some(sp) = &spatial {
                spatial_draws.push(sp.effects.iter().copied().collect());
                spatial_var_draws.push(sp.variance);
            }
            sigma_draws.push(sigma);
            let mut dev = 0.0;
            for i in 0..n {
                dev += ald_logdensity(y[i], eta[i], sigma, tau)?;
            }
            deviance_draws.push(-2.0 * dev);
            for i in 0..n {
                eta_sum[i] += eta[i];
            }
        }
    }

    let stored = sigma_draws.len();
    let mean_eta: Vec<f64> = eta_sum.iter().map(|s| s / stored.max(1) as f64).collect();

    let smooth_fits: Vec<SmoothFit> = smooths
        .into_iter()
        .zip(smooth_draws)
        .zip(smooth_var_draws)
        .map(|((sb, coef_draws), variance_draws)| SmoothFit {
            column: sb.spec.column,
            basis: sb.basis,
            coef_draws,
            variance_draws,
        })
        .collect();
    let spatial_fit = spatial.map(|sp| SpatialFit {
        region_column: sp.spec.region_column,
        labels: sp.labels,
        effect_draws: spatial_draws,
        variance_draws: spatial_var_draws,
        components: sp.gmrf.components().to_vec(),
    });

    Ok(FitResult {
        spec: spec.clone(),
        linear_names,
        linear_draws,
        smooth: smooth_fits,
        spatial: spatial_fit,
        sigma_draws,
        deviance_draws,
        mean_eta,
        response: y,
        standardization,
    })
}

/// DIC decomposition: mean deviance, plug-in deviance at the
/// posterior-mean predictor and scale, pD, and DIC.
pub fn dic(fit: &FitResult) -> Result<DicSummary> {
    if fit.deviance_draws.is_empty() {
        return Err(Error::EmptySample("dic"));
    }
    let mean_deviance =
        fit.deviance_draws.iter().sum::<f64>() / fit.deviance_draws.len() as f64;
    let sigma_bar = fit.sigma_draws.iter().sum::<f64>() / fit.sigma_draws.len() as f64;
    let mut plugin = 0.0;
    for (y, eta) in fit.response.iter().zip(&fit.mean_eta) {
        plugin += ald_logdensity(*y, *eta, sigma_bar, fit.spec.tau)?;
    }
    let plugin_deviance = -2.0 * plugin;
    let effective_params = mean_deviance - plugin_deviance;
    Ok(DicSummary {
        mean_deviance,
        plugin_deviance,
        effective_params,
        dic: mean_deviance + effective_params,
    })
}

/// Pointwise posterior mean and 95% band of a smooth term on an equally
/// spaced grid over the covariate's observed range. The grid is
/// reported on the original covariate scale when the fit carries a
/// standardization record for that column.
pub fn effect_curve(fit: &FitResult, term: &str, grid_size: usize) -> Result<EffectCurve> {
    let sf = fit
        .smooth
        .iter()
        .find(|s| s.column == term)
        .ok_or_else(|| Error::UnknownColumn(term.to_string()))?;
    if grid_size < 2 {
        return Err(Error::InvalidArgument("grid size must be >= 2".into()));
    }
    let (min, max) = sf.basis.domain();
    let step = (max - min) / (grid_size - 1) as f64;
    let mut grid = Vec::with_capacity(grid_size);
    let mut mean = Vec::with_capacity(grid_size);
    let mut lower = Vec::with_capacity(grid_size);
    let mut upper = Vec::with_capacity(grid_size);
    for gi in 0..grid_size {
        let x = if gi + 1 == grid_size {
            max
        } else {
            min + gi as f64 * step
        };
        let (first, values) = sf.basis.evaluate(x)?;
        let point_draws: Vec<f64> = sf
            .coef_draws
            .iter()
            .map(|coef| {
                values
                    .iter()
                    .enumerate()
                    .map(|(k, v)| v * coef[first + k])
                    .sum()
            })
            .collect();
        let s = summarize(&point_draws)?;
        let x_out = match &fit.standardization {
            Some(rep) => rep.destandardize(term, x),
            None => x,
        };
        grid.push(x_out);
        mean.push(s.mean);
        lower.push(s.lower);
        upper.push(s.upper);
    }
    Ok(EffectCurve {
        grid,
        mean,
        lower,
        upper,
    })
}

/// Per-region posterior summaries of the spatial effect, in graph label
/// order.
pub fn spatial_table(fit: &FitResult) -> Result<Vec<SpatialEffect>> {
    let sp = fit
        .spatial
        .as_ref()
        .ok_or_else(|| Error::InvalidModel("fit contains no spatial term".into()))?;
    let mut out = Vec::with_capacity(sp.labels.len());
    for (r, label) in sp.labels.iter().enumerate() {
        let draws: Vec<f64> = sp.effect_draws.iter().map(|d| d[r]).collect();
        let s = summarize(&draws)?;
        out.push(SpatialEffect {
            label: label.clone(),
            mean: s.mean,
            lower: s.lower,
            upper: s.upper,
            significant: s.significant,
        });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth;
    use approx::assert_relative_eq;

    #[test]
    fn check_loss_basics() {
        assert_eq!(check_loss(0.0, 0.3), 0.0);
        assert_relative_eq!(check_loss(2.0, 0.3), 0.6, max_relative = 1e-12);
        assert_relative_eq!(check_loss(-2.0, 0.3), 1.4, max_relative = 1e-12);
        assert_relative_eq!(check_loss(1.0, 0.5) + check_loss(-1.0, 0.5), 1.0, max_relative = 1e-12);
    }

    #[test]
    fn ald_logdensity_values() {
        // symmetric case at the mode reduces to log(1/(4 sigma))
        assert_relative_eq!(
            ald_logdensity(0.0, 0.0, 1.0, 0.5).unwrap(),
            0.25f64.ln(),
            max_relative = 1e-12
        );
        assert_relative_eq!(
            ald_logdensity(1.0, 0.0, 2.0, 0.15).unwrap(),
            (0.15 * 0.85 / 2.0_f64).ln() - 0.075,
            max_relative = 1e-12
        );
        assert!(ald_logdensity(1.0, 0.0, 0.0, 0.5).is_err());
    }

    #[test]
    fn ald_density_integrates_to_one() {
        // trapezoid over a wide grid
        let (sigma, tau) = (0.7, 0.3);
        let (lo, hi, steps) = (-60.0, 60.0, 400_000);
        let h = (hi - lo) / steps as f64;
        let mut total = 0.0;
        for i in 0..=steps {
            let y = lo + i as f64 * h;
            let f = ald_logdensity(y, 0.0, sigma, tau).unwrap().exp();
            total += if i == 0 || i == steps { 0.5 * f } else { f };
        }
        total *= h;
        assert!((total - 1.0).abs() < 1e-6, "integral {total}");
    }

    /// Mean of GIG(1/2, chi, psi) by quadrature in log space.
    fn gig_mean_quadrature(chi: f64, psi: f64) -> f64 {
        let steps = 200_000;
        let (u_lo, u_hi) = (-40.0_f64, 15.0_f64);
        let h = (u_hi - u_lo) / steps as f64;
        let mut num = 0.0;
        let mut den = 0.0;
        for i in 0..=steps {
            let u = u_lo + i as f64 * h;
            let w = u.exp();
            // unnormalized density times dw = w du (log-space substitution)
            let f = (-0.5 * u - 0.5 * (chi / w + psi * w)).exp() * w;
            let weight = if i == 0 || i == steps { 0.5 } else { 1.0 };
            num += weight * f * w;
            den += weight * f;
        }
        num / den
    }

    #[test]
    fn latent_weight_matches_quadrature_mean() {
        let (residual, sigma, tau) = (0.7, 1.3, 0.3);
        let (xi, kappa2) = mixture_constants(tau);
        let chi = residual * residual / (kappa2 * sigma);
        let psi = xi * xi / (kappa2 * sigma) + 2.0 / sigma;
        let expected = gig_mean_quadrature(chi, psi);
        let mut rng = ChaCha20Rng::seed_from_u64(11);
        let n = 100_000;
        let mut sum = 0.0;
        for _ in 0..n {
            let w = sample_latent_weight(residual, sigma, tau, &mut rng).unwrap();
            assert!(w > 0.0);
            sum += w;
        }
        let mc = sum / n as f64;
        assert!(
            (mc - expected).abs() <= 0.02 * expected,
            "mc {mc} vs quadrature {expected}"
        );
    }

    #[test]
    fn latent_weight_is_seed_deterministic() {
        let mut a = ChaCha20Rng::seed_from_u64(4);
        let mut b = ChaCha20Rng::seed_from_u64(4);
        for _ in 0..50 {
            let wa = sample_latent_weight(0.3, 0.8, 0.85, &mut a).unwrap();
            let wb = sample_latent_weight(0.3, 0.8, 0.85, &mut b).unwrap();
            assert_eq!(wa, wb);
        }
        assert!(sample_latent_weight(f64::NAN, 1.0, 0.5, &mut a).is_err());
        assert!(sample_latent_weight(1.0, 0.0, 0.5, &mut a).is_err());
    }

    #[test]
    fn mixture_representation_hits_the_quantile() {
        // eps = xi w + kappa sqrt(sigma w) z with w ~ Exp(mean sigma) has
        // its tau-quantile at zero
        let tau = 0.15;
        let sigma = 1.0;
        let (xi, kappa2) = mixture_constants(tau);
        let kappa = kappa2.sqrt();
        let mut rng = ChaCha20Rng::seed_from_u64(21);
        let n = 200_000;
        let eps: Vec<f64> = (0..n)
            .map(|_| {
                let u: f64 = rng.gen::<f64>();
                let w = -sigma * (1.0 - u).ln();
                let z: f64 = StandardNormal.sample(&mut rng);
                xi * w + kappa * (sigma * w).sqrt() * z
            })
            .collect();
        let q = sample_quantile(&eps, tau).unwrap();
        assert!(q.abs() < 0.02, "tau-quantile of mixture draws is {q}");
    }

    #[test]
    fn gaussian_block_zero_noise_solves_the_system() {
        let p = DMatrix::from_row_slice(2, 2, &[2.0, 1.0, 1.0, 3.0]);
        let b = DVector::from_column_slice(&[5.0, 5.0]);
        let z = DVector::zeros(2);
        let x = gaussian_block_from_noise(&p, &b, &z).unwrap();
        assert_relative_eq!(x[0], 2.0, max_relative = 1e-12);
        assert_relative_eq!(x[1], 1.0, max_relative = 1e-12);
    }

    #[test]
    fn gaussian_block_scalar_moments() {
        // precision 4, linear term 8: mean 2, sd 0.5
        let p = DMatrix::from_row_slice(1, 1, &[4.0]);
        let b = DVector::from_column_slice(&[8.0]);
        let mut rng = ChaCha20Rng::seed_from_u64(33);
        let n = 100_000;
        let draws: Vec<f64> = (0..n)
            .map(|_| sample_gaussian_block(&p, &b, &mut rng).unwrap()[0])
            .collect();
        let mean = draws.iter().sum::<f64>() / n as f64;
        let sd = (draws.iter().map(|d| (d - mean).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt();
        assert!((mean - 2.0).abs() < 0.01, "mean {mean}");
        assert!((sd - 0.5).abs() < 0.01, "sd {sd}");
    }

    #[test]
    fn gaussian_block_correlated_covariance() {
        let p = DMatrix::from_row_slice(2, 2, &[2.0, 1.0, 1.0, 3.0]);
        let b = DVector::zeros(2);
        // target covariance is P^{-1} = [[0.6, -0.2], [-0.2, 0.4]]
        let mut rng = ChaCha20Rng::seed_from_u64(17);
        let n = 100_000;
        let (mut c00, mut c01, mut c11) = (0.0, 0.0, 0.0);
        for _ in 0..n {
            let x = sample_gaussian_block(&p, &b, &mut rng).unwrap();
            c00 += x[0] * x[0];
            c01 += x[0] * x[1];
            c11 += x[1] * x[1];
        }
        assert!((c00 / n as f64 - 0.6).abs() < 0.02);
        assert!((c01 / n as f64 + 0.2).abs() < 0.02);
        assert!((c11 / n as f64 - 0.4).abs() < 0.02);
    }

    #[test]
    fn jitter_rescues_semidefinite_precision() {
        let p = DMatrix::from_row_slice(2, 2, &[1.0, 1.0, 1.0, 1.0]);
        let b = DVector::from_column_slice(&[1.0, 1.0]);
        let z = DVector::zeros(2);
        let x = gaussian_block_from_noise(&p, &b, &z).unwrap();
        assert!(x.iter().all(|v| v.is_finite()));
    }

    #[test]
    fn summarize_constant_and_symmetric_draws() {
        let s = summarize(&vec![1.0; 100]).unwrap();
        assert_eq!(s.mean, 1.0);
        assert!(s.significant);
        let symmetric: Vec<f64> = (-500..=500).map(|i| i as f64 / 500.0).collect();
        let s = summarize(&symmetric).unwrap();
        assert_relative_eq!(s.mean, 0.0, epsilon = 1e-12);
        assert!(s.lower < 0.0 && s.upper > 0.0);
        assert!(!s.significant);
        assert!(summarize(&[]).is_err());
    }

    #[test]
    fn summarize_interval_endpoints_follow_the_quantile_rule() {
        // 1000 equally spaced draws on [-0.02, 0.98]: the 2.5% endpoint
        // interpolates to exactly 0.005, so the interval excludes zero
        let draws: Vec<f64> = (0..1000).map(|i| -0.02 + i as f64 / 999.0).collect();
        let s = summarize(&draws).unwrap();
        assert_relative_eq!(s.lower, 0.005, epsilon = 1e-12);
        assert_relative_eq!(s.upper, 0.955, epsilon = 1e-12);
        assert!(s.significant);
        // shifting down by 0.01 puts zero inside the interval
        let draws: Vec<f64> = (0..1000).map(|i| -0.03 + i as f64 / 999.0).collect();
        let s = summarize(&draws).unwrap();
        assert_relative_eq!(s.lower, -0.005, epsilon = 1e-12);
        assert!(!s.significant);
    }

    fn quick_schedule(iterations: usize, burn_in: usize, thin: usize, seed: u64) -> McmcConfig {
        McmcConfig {
            iterations,
            burn_in,
            thin,
            seed,
        }
    }

    #[test]
    fn fit_stores_the_scheduled_draw_count() {
        let (d, _) = synth::scenario_a_linear(60, 9).unwrap();
        let mut spec = ModelSpec::new("y", 0.5);
        spec.linear = vec!["x".into()];
        spec.mcmc = quick_schedule(300, 100, 10, 1);
        let fit = fit(&d, None, &spec, None).unwrap();
        assert_eq!(fit.stored_count(), 20);
        assert_eq!(spec.mcmc.stored_count(), 20);
        assert_eq!(fit.linear_names, vec!["intercept".to_string(), "x".to_string()]);
        assert!(fit.sigma_draws.iter().all(|s| *s > 0.0));
        assert!(fit.deviance_draws.iter().all(|d| d.is_finite()));
    }

    #[test]
    fn fit_is_bit_reproducible_for_equal_seeds() {
        let (d, _) = synth::scenario_a_linear(60, 2).unwrap();
        let mut spec = ModelSpec::new("y", 0.15);
        spec.linear = vec!["x".into()];
        spec.mcmc = quick_schedule(400, 100, 10, 77);
        let a = fit(&d, None, &spec, None).unwrap();
        let b = fit(&d, None, &spec, None).unwrap();
        assert_eq!(a.linear_draws, b.linear_draws);
        assert_eq!(a.sigma_draws, b.sigma_draws);
        assert_eq!(a.deviance_draws, b.deviance_draws);
        assert_eq!(a.mean_eta, b.mean_eta);
        spec.mcmc.seed = 78;
        let c = fit(&d, None, &spec, None).unwrap();
        assert_ne!(a.linear_draws, c.linear_draws);
    }

    #[test]
    fn fit_rejects_bad_specs() {
        let (d, _) = synth::scenario_a_linear(60, 3).unwrap();
        assert!(fit(&d, None, &ModelSpec::new("y", 0.0), None).is_err());
        assert!(fit(&d, None, &ModelSpec::new("nope", 0.5), None).is_err());
        let mut spec = ModelSpec::new("y", 0.5);
        spec.mcmc = quick_schedule(100, 100, 10, 1);
        assert!(fit(&d, None, &spec, None).is_err());
        let mut spec = ModelSpec::new("y", 0.5);
        spec.spatial = Some(SpatialTermSpec {
            region_column: "x".into(),
        });
        assert!(fit(&d, None, &spec, None).is_err());
    }

    #[test]
    fn median_fit_tracks_the_sample_median() {
        // intercept-only model at tau = 0.5; oracle: brute-force
        // check-loss minimizer over a fine grid
        let (d, _) = synth::scenario_a_linear(200, 5).unwrap();
        let y = d.column("y").unwrap().to_vec();
        let mut best = (f64::INFINITY, 0.0);
        for k in 0..=4000 {
            let c = -6.0 + 12.0 * k as f64 / 4000.0;
            let loss: f64 = y.iter().map(|v| check_loss(v - c, 0.5)).sum();
            if loss < best.0 {
                best = (loss, c);
            }
        }
        let mut spec = ModelSpec::new("y", 0.5);
        spec.mcmc = quick_schedule(3000, 500, 25, 13);
        let fit = fit(&d, None, &spec, None).unwrap();
        let draws = fit.linear_coef_draws("intercept").unwrap();
        let posterior_mean = draws.iter().sum::<f64>() / draws.len() as f64;
        assert!(
            (posterior_mean - best.1).abs() < 0.15,
            "posterior mean {posterior_mean}, check-loss minimizer {}",
            best.1
        );
        let frac = fit.fraction_below_fit();
        assert!((frac - 0.5).abs() < 0.1, "fraction below fit {frac}");
    }

    #[test]
    fn smooth_fit_respects_centering_and_positivity() {
        let (d, _) = synth::scenario_b_smooth(200, 4).unwrap();
        let mut spec = ModelSpec::new("y", 0.5);
        spec.smooth = vec![SmoothTermSpec::new("x")];
        spec.mcmc = quick_schedule(600, 200, 20, 3);
        let fit = fit(&d, None, &spec, None).unwrap();
        assert_eq!(fit.stored_count(), 20);
        let sf = &fit.smooth[0];
        assert_eq!(sf.basis.n_basis(), 22);
        assert!(sf.variance_draws.iter().all(|v| *v > 0.0));
        let x = d.column("x").unwrap();
        let design = basis::design_matrix(x, &sf.basis).unwrap();
        for coef in &sf.coef_draws {
            let gamma = DVector::from_column_slice(coef);
            let fitted = &design * gamma;
            let mean = fitted.iter().sum::<f64>() / fitted.len() as f64;
            assert!(mean.abs() < 1e-8, "fitted smooth mean {mean}");
        }
    }

    #[test]
    fn spatial_fit_centers_each_component() {
        let (d, g, _) = synth::scenario_c_spatial(4, 5, 6).unwrap();
        let mut spec = ModelSpec::new("y", 0.5);
        spec.spatial = Some(SpatialTermSpec {
            region_column: "region".into(),
        });
        spec.mcmc = quick_schedule(600, 200, 20, 8);
        let fit = fit(&d, Some(&g), &spec, None).unwrap();
        let sp = fit.spatial.as_ref().unwrap();
        assert_eq!(sp.labels.len(), 16);
        assert_eq!(sp.components.len(), 1);
        assert!(sp.variance_draws.iter().all(|v| *v > 0.0));
        for draw in &sp.effect_draws {
            for comp in &sp.components {
                let mean = comp.iter().map(|&j| draw[j]).sum::<f64>() / comp.len() as f64;
                assert!(mean.abs() < 1e-8, "component mean {mean}");
            }
        }
        let table = spatial_table(&fit).unwrap();
        assert_eq!(table.len(), 16);
        assert_eq!(table[0].label, "0");
    }

    fn constant_fit(value: f64) -> FitResult {
        let spec = ModelSpec::new("y", 0.5);
        let y = vec![0.0, 1.0, 2.0];
        let eta = vec![value; 3];
        let sigma = 1.25;
        let dev: f64 = -2.0
            * y.iter()
                .map(|v| ald_logdensity(*v, value, sigma, 0.5).unwrap())
                .sum::<f64>();
        FitResult {
            spec,
            linear_names: vec!["intercept".into()],
            linear_draws: vec![vec![value]; 4],
            smooth: Vec::new(),
            spatial: None,
            sigma_draws: vec![sigma; 4],
            deviance_draws: vec![dev; 4],
            mean_eta: eta,
            response: y,
            standardization: None,
        }
    }

    #[test]
    fn dic_of_a_degenerate_chain_has_zero_complexity() {
        let fit = constant_fit(1.0);
        let d = dic(&fit).unwrap();
        assert_relative_eq!(d.effective_params, 0.0, epsilon = 1e-10);
        assert_relative_eq!(d.dic, d.mean_deviance, epsilon = 1e-10);
        assert_relative_eq!(d.mean_deviance, d.plugin_deviance, epsilon = 1e-10);
    }

    #[test]
    fn effect_curve_of_zero_coefficients_is_flat() {
        let basis = basis::knot_sequence(0.0, 1.0, 8, 3).unwrap();
        let mut fit = constant_fit(0.0);
        fit.smooth.push(SmoothFit {
            column: "x".into(),
            basis,
            coef_draws: vec![vec![0.0; 8]; 4],
            variance_draws: vec![1.0; 4],
        });
        let curve = effect_curve(&fit, "x", 11).unwrap();
        assert_eq!(curve.grid.len(), 11);
        assert_relative_eq!(curve.grid[0], 0.0, epsilon = 1e-12);
        assert_relative_eq!(*curve.grid.last().unwrap(), 1.0, epsilon = 1e-12);
        assert!(curve.mean.iter().all(|v| *v == 0.0));
        assert!(curve.lower.iter().all(|v| *v == 0.0));
        assert!(curve.upper.iter().all(|v| *v == 0.0));
        assert!(effect_curve(&fit, "missing", 11).is_err());
        assert!(effect_curve(&fit, "x", 1).is_err());
    }

    #[test]
    fn effect_curve_grid_uses_the_original_scale() {
        let basis = basis::knot_sequence(-1.0, 1.0, 8, 3).unwrap();
        let mut fit = constant_fit(0.0);
        fit.smooth.push(SmoothFit {
            column: "x".into(),
            basis,
            coef_draws: vec![vec![0.0; 8]; 4],
            variance_draws: vec![1.0; 4],
        });
        fit.standardization = Some(crate::ingest::StandardizationReport {
            scales: vec![crate::ingest::ColumnScale {
                name: "x".into(),
                mean: 10.0,
                sd: 2.0,
            }],
        });
        let curve = effect_curve(&fit, "x", 5).unwrap();
        assert_relative_eq!(curve.grid[0], 8.0, epsilon = 1e-12);
        assert_relative_eq!(*curve.grid.last().unwrap(), 12.0, epsilon = 1e-12);
    }
}
