//! Discrete entropy / mutual-information toolkit with built-in identity checks.
//!
//! Everything operates on explicit finite probability tables, so every
//! identity can be verified by direct enumeration. All functions are pure and
//! safe to call concurrently.

use std::collections::BTreeMap;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand::SeedableRng;
use serde::Serialize;

use crate::error::{Error, Result};

/// Probabilities below this are treated as exact zeros (0·log 0 := 0).
const PROB_FLOOR: f64 = 1e-15;

/// Log base for entropy values. Identity residuals are base-invariant.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum LogBase {
    #[default]
    Nats,
    Bits,
}

impl LogBase {
    fn from_nats(self, nats: f64) -> f64 {
        match self {
            LogBase::Nats => nats,
            LogBase::Bits => nats / std::f64::consts::LN_2,
        }
    }
}

fn neg_p_ln_p(p: f64) -> f64 {
    if p < PROB_FLOOR {
        0.0
    } else {
        -p * p.ln()
    }
}

/// A finite joint distribution over 2 or 3 variables, stored as a flat
/// row-major table.
#[derive(Debug, Clone, PartialEq)]
pub struct DiscreteJoint {
    support_sizes: Vec<usize>,
    probs: Vec<f64>,
}

impl DiscreteJoint {
    pub fn new(support_sizes: Vec<usize>, probs: Vec<f64>) -> Result<Self> {
        if support_sizes.len() < 2 || support_sizes.len() > 3 {
            return Err(Error::InvalidArgument(format!(
                "joint must have 2 or 3 variables, got {}",
                support_sizes.len()
            )));
        }
        if support_sizes.iter().any(|&s| s == 0) {
            return Err(Error::InvalidArgument("support sizes must be positive".into()));
        }
        let cells: usize = support_sizes.iter().product();
        if probs.len() != cells {
            return Err(Error::InvalidArgument(format!(
                "table length {} does not match product of support sizes {}",
                probs.len(),
                cells
            )));
        }
        if let Some(p) = probs.iter().find(|&&p| p < 0.0) {
            return Err(Error::InvalidArgument(format!("negative probability {p}")));
        }
        let total: f64 = probs.iter().sum();
        if (total - 1.0).abs() > 1e-12 {
            return Err(Error::InvalidArgument(format!(
                "probabilities sum to {total}, expected 1 within 1e-12"
            )));
        }
        Ok(DiscreteJoint { support_sizes, probs })
    }

    pub fn num_vars(&self) -> usize {
        self.support_sizes.len()
    }

    pub fn support_sizes(&self) -> &[usize] {
        &self.support_sizes
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    fn flat_index(&self, outcome: &[usize]) -> usize {
        debug_assert_eq!(outcome.len(), self.support_sizes.len());
        let mut idx = 0;
        for (o, s) in outcome.iter().zip(&self.support_sizes) {
            debug_assert!(o < s);
            idx = idx * s + o;
        }
        idx
    }

    pub fn prob(&self, outcome: &[usize]) -> f64 {
        self.probs[self.flat_index(outcome)]
    }

    fn decode(&self, mut idx: usize) -> Vec<usize> {
        let n = self.support_sizes.len();
        let mut outcome = vec![0; n];
        for pos in (0..n).rev() {
            let s = self.support_sizes[pos];
            outcome[pos] = idx % s;
            idx /= s;
        }
        outcome
    }

    /// Iterate as (outcome tuple, probability).
    pub fn cells(&self) -> impl Iterator<Item = (Vec<usize>, f64)> + '_ {
        self.probs.iter().enumerate().map(|(i, &p)| (self.decode(i), p))
    }

    fn check_vars(&self, vars: &[usize]) -> Result<()> {
        if vars.is_empty() {
            return Err(Error::InvalidArgument("variable subset is empty".into()));
        }
        for &v in vars {
            if v >= self.num_vars() {
                return Err(Error::InvalidArgument(format!(
                    "unknown variable index {v} (joint has {} variables)",
                    self.num_vars()
                )));
            }
        }
        let mut seen = vec![false; self.num_vars()];
        for &v in vars {
            if seen[v] {
                return Err(Error::InvalidArgument(format!("variable {v} listed twice")));
            }
            seen[v] = true;
        }
        Ok(())
    }

    /// Marginal table over `vars`, in the order given. Returned probabilities
    /// are raw sums, not revalidated, so tiny negative rounding cannot occur.
    fn marginal_probs(&self, vars: &[usize]) -> (Vec<usize>, Vec<f64>) {
        let sizes: Vec<usize> = vars.iter().map(|&v| self.support_sizes[v]).collect();
        let cells: usize = sizes.iter().product();
        let mut out = vec![0.0; cells];
        for (outcome, p) in self.cells() {
            if p == 0.0 {
                continue;
            }
            let mut idx = 0;
            for (&v, &s) in vars.iter().zip(&sizes) {
                idx = idx * s + outcome[v];
            }
            out[idx] += p;
        }
        (sizes, out)
    }

    /// Dirichlet(1)-distributed random table, deterministic per RNG stream.
    pub fn random<R: Rng>(rng: &mut R, support_sizes: Vec<usize>) -> Result<Self> {
        let cells: usize = support_sizes.iter().product();
        let mut probs: Vec<f64> = (0..cells)
            .map(|_| {
                let u: f64 = rng.gen::<f64>().max(1e-12);
                -u.ln()
            })
            .collect();
        let total: f64 = probs.iter().sum();
        for p in &mut probs {
            *p /= total;
        }
        DiscreteJoint::new(support_sizes, probs)
    }

    /// Extend a 2-variable joint with a third variable that deterministically
    /// pairs the first two (the "combined space" construction).
    pub fn with_pairing(&self) -> Result<DiscreteJoint> {
        if self.num_vars() != 2 {
            return Err(Error::InvalidArgument(format!(
                "pairing extension needs a 2-variable joint, got {}",
                self.num_vars()
            )));
        }
        let (s0, s1) = (self.support_sizes[0], self.support_sizes[1]);
        let pair = s0 * s1;
        let mut probs = vec![0.0; s0 * s1 * pair];
        for (outcome, p) in self.cells() {
            let (i, j) = (outcome[0], outcome[1]);
            let k = i * s1 + j;
            probs[(i * s1 + j) * pair + k] = p;
        }
        DiscreteJoint::new(vec![s0, s1, pair], probs)
    }
}

/// Shannon entropy of the marginal over `vars`.
pub fn entropy(joint: &DiscreteJoint, vars: &[usize], base: LogBase) -> Result<f64> {
    joint.check_vars(vars)?;
    let (_, probs) = joint.marginal_probs(vars);
    Ok(base.from_nats(probs.iter().map(|&p| neg_p_ln_p(p)).sum()))
}

/// Pairwise mutual information H(a) + H(b) - H(a,b).
pub fn mutual_information_pair(joint: &DiscreteJoint, a: usize, b: usize, base: LogBase) -> Result<f64> {
    if a == b {
        return Err(Error::InvalidArgument(format!("variable {a} passed twice")));
    }
    let ha = entropy(joint, &[a], base)?;
    let hb = entropy(joint, &[b], base)?;
    let hab = entropy(joint, &[a, b], base)?;
    Ok(ha + hb - hab)
}

/// Three-way interaction information by inclusion-exclusion over entropies.
/// Can be negative (the XOR configuration gives -1 bit).
pub fn mutual_information_triple(joint: &DiscreteJoint, base: LogBase) -> Result<f64> {
    if joint.num_vars() != 3 {
        return Err(Error::InvalidArgument(format!(
            "interaction information needs exactly 3 variables, got {}",
            joint.num_vars()
        )));
    }
    Ok(entropy(joint, &[0], base)?
        + entropy(joint, &[1], base)?
        + entropy(joint, &[2], base)?
        - entropy(joint, &[0, 2], base)?
        - entropy(joint, &[1, 2], base)?
        - entropy(joint, &[0, 1], base)?
        + entropy(joint, &[0, 1, 2], base)?)
}

/// Conditional mutual information I(a;b|given) by direct expectation over the
/// conditioning variable.
pub fn conditional_mutual_information(
    joint: &DiscreteJoint,
    a: usize,
    b: usize,
    given: usize,
    base: LogBase,
) -> Result<f64> {
    joint.check_vars(&[a, b, given])?;
    let (sizes, table) = joint.marginal_probs(&[a, b, given]);
    let (na, nb, ng) = (sizes[0], sizes[1], sizes[2]);
    let cell = |ia: usize, ib: usize, ig: usize| table[(ia * nb + ib) * ng + ig];
    let mut total = 0.0;
    for ig in 0..ng {
        let pz: f64 = (0..na).map(|ia| (0..nb).map(|ib| cell(ia, ib, ig)).sum::<f64>()).sum();
        if pz < PROB_FLOOR {
            continue;
        }
        for ia in 0..na {
            let pa: f64 = (0..nb).map(|ib| cell(ia, ib, ig)).sum();
            for ib in 0..nb {
                let pab = cell(ia, ib, ig);
                if pab < PROB_FLOOR {
                    continue;
                }
                let pb: f64 = (0..na).map(|ja| cell(ja, ib, ig)).sum();
                total += pab * ((pab * pz) / (pa * pb)).ln();
            }
        }
    }
    Ok(base.from_nats(total))
}

/// Residuals of the combined-space entropy collapse and the induced
/// interaction-information reduction. The third variable must be a
/// deterministic function of the first two.
pub fn verify_subset_reduction(joint: &DiscreteJoint, base: LogBase) -> Result<BTreeMap<String, f64>> {
    if joint.num_vars() != 3 {
        return Err(Error::InvalidArgument(format!(
            "subset reduction needs exactly 3 variables, got {}",
            joint.num_vars()
        )));
    }
    // deterministic-pairing precondition: each (v0, v1) with mass supports one v2
    let (sizes, table) = joint.marginal_probs(&[0, 1, 2]);
    let (n0, n1, n2) = (sizes[0], sizes[1], sizes[2]);
    for i in 0..n0 {
        for j in 0..n1 {
            let mut seen: Option<usize> = None;
            for k in 0..n2 {
                if table[(i * n1 + j) * n2 + k] > PROB_FLOOR {
                    if let Some(prev) = seen {
                        return Err(Error::Precondition(format!(
                            "third variable is not determined by the first two: \
                             outcomes ({i},{j},{prev}) and ({i},{j},{k}) both have mass"
                        )));
                    }
                    seen = Some(k);
                }
            }
        }
    }
    let h_full = entropy(joint, &[0, 1, 2], base)?;
    let h_02 = entropy(joint, &[0, 2], base)?;
    let h_12 = entropy(joint, &[1, 2], base)?;
    let h_2 = entropy(joint, &[2], base)?;
    let interaction = mutual_information_triple(joint, base)?;
    let reduced = entropy(joint, &[0], base)? + entropy(joint, &[1], base)? - entropy(joint, &[0, 1], base)?;
    let mut out = BTreeMap::new();
    out.insert("h(0,1,2)=h(0,2)".into(), (h_full - h_02).abs());
    out.insert("h(0,1,2)=h(1,2)".into(), (h_full - h_12).abs());
    out.insert("h(0,1,2)=h(2)".into(), (h_full - h_2).abs());
    out.insert("interaction=h(0)+h(1)-h(0,1)".into(), (interaction - reduced).abs());
    Ok(out)
}

/// Terms of the chain decomposition I(0;2) = interaction(0,1,2) + I(0;2|1).
#[derive(Debug, Clone, Serialize)]
pub struct ChainDecomposition {
    /// I(first; target)
    pub mi_first_target: f64,
    /// three-way interaction information
    pub interaction: f64,
    /// I(first; target | second), computed by brute-force expectation
    pub conditional_mi: f64,
    /// |I(first;target) - interaction - I(first;target|second)|
    pub residual: f64,
    /// H(first, target | second): the conditional joint entropy, reported for
    /// reference alongside the conditional mutual information.
    pub conditional_joint_entropy: f64,
}

/// Verify the chain rule linking pairwise MI, interaction information, and
/// conditional MI on a 3-variable joint.
pub fn verify_chain_decomposition(joint: &DiscreteJoint, base: LogBase) -> Result<ChainDecomposition> {
    if joint.num_vars() != 3 {
        return Err(Error::InvalidArgument(format!(
            "chain decomposition needs exactly 3 variables, got {}",
            joint.num_vars()
        )));
    }
    let mi_first_target = mutual_information_pair(joint, 0, 2, base)?;
    let interaction = mutual_information_triple(joint, base)?;
    let conditional_mi = conditional_mutual_information(joint, 0, 2, 1, base)?;
    let residual = (mi_first_target - interaction - conditional_mi).abs();
    // H(0,2|1) = H(0,1,2) - H(1)
    let conditional_joint_entropy = entropy(joint, &[0, 1, 2], base)? - entropy(joint, &[1], base)?;
    Ok(ChainDecomposition {
        mi_first_target,
        interaction,
        conditional_mi,
        residual,
        conditional_joint_entropy,
    })
}

/// One conditioning context for [`verify_conditional_mi_decomposition`]: a
/// latent sample prior plus per-sample emission rows for the two observed
/// variables (the observations are conditionally independent given the
/// sample, which is what makes the cross-entropy form exact).
#[derive(Debug, Clone)]
pub struct FactoredContext {
    pub sample_prior: Vec<f64>,
    /// rows: per-sample distribution of the first observation
    pub first_obs: Vec<Vec<f64>>,
    /// rows: per-sample distribution of the second observation
    pub second_obs: Vec<Vec<f64>>,
}

#[derive(Debug, Clone)]
pub struct FactoredFamily {
    pub context_prior: Vec<f64>,
    pub contexts: Vec<FactoredContext>,
}

#[derive(Debug, Clone, Serialize)]
pub struct ConditionalDecomposition {
    /// conditional MI computed directly from the induced joints
    pub direct: f64,
    /// expected entropy minus expected cross-entropy form
    pub entropy_minus_cross_entropy: f64,
    pub residual: f64,
}

fn check_distribution(name: &str, p: &[f64]) -> Result<()> {
    if p.iter().any(|&x| x < 0.0) {
        return Err(Error::Precondition(format!("{name} has a negative entry")));
    }
    let total: f64 = p.iter().sum();
    if (total - 1.0).abs() > 1e-9 {
        return Err(Error::Precondition(format!("{name} sums to {total}, not normalized")));
    }
    Ok(())
}

/// Decompose conditional mutual information into expected entropy minus
/// expected cross-entropy and return the residual between the two routes.
pub fn verify_conditional_mi_decomposition(
    family: &FactoredFamily,
    base: LogBase,
) -> Result<ConditionalDecomposition> {
    if family.contexts.is_empty() || family.contexts.len() != family.context_prior.len() {
        return Err(Error::InvalidArgument("context prior and context list disagree".into()));
    }
    check_distribution("context prior", &family.context_prior)?;
    let mut direct = 0.0;
    let mut decomposed = 0.0;
    for (ctx_idx, (w, ctx)) in family.context_prior.iter().zip(&family.contexts).enumerate() {
        check_distribution(&format!("context {ctx_idx} sample prior"), &ctx.sample_prior)?;
        if ctx.first_obs.len() != ctx.sample_prior.len() || ctx.second_obs.len() != ctx.sample_prior.len() {
            return Err(Error::InvalidArgument(format!(
                "context {ctx_idx}: emission tables must have one row per sample"
            )));
        }
        for (s, row) in ctx.first_obs.iter().enumerate() {
            check_distribution(&format!("context {ctx_idx} first-obs row {s}"), row)?;
        }
        for (s, row) in ctx.second_obs.iter().enumerate() {
            check_distribution(&format!("context {ctx_idx} second-obs row {s}"), row)?;
        }
        let nv = ctx.first_obs[0].len();
        let na = ctx.second_obs[0].len();
        // induced joint over (first, second)
        let mut pva = vec![0.0; nv * na];
        for (s, &ps) in ctx.sample_prior.iter().enumerate() {
            for (v, &pv) in ctx.first_obs[s].iter().enumerate() {
                for (a, &pa) in ctx.second_obs[s].iter().enumerate() {
                    pva[v * na + a] += ps * pv * pa;
                }
            }
        }
        let pv_marg: Vec<f64> = (0..nv).map(|v| (0..na).map(|a| pva[v * na + a]).sum()).collect();
        let pa_marg: Vec<f64> = (0..na).map(|a| (0..nv).map(|v| pva[v * na + a]).sum()).collect();

        // direct route
        let mut mi = 0.0;
        for v in 0..nv {
            for a in 0..na {
                let p = pva[v * na + a];
                if p < PROB_FLOOR {
                    continue;
                }
                mi += p * (p / (pv_marg[v] * pa_marg[a])).ln();
            }
        }
        direct += w * mi;

        // decomposed route: E[H(p(first|ctx))] - E[cross-entropy]
        let h_v: f64 = pv_marg.iter().map(|&p| neg_p_ln_p(p)).sum();
        let mut cross = 0.0;
        for (s, &ps) in ctx.sample_prior.iter().enumerate() {
            if ps < PROB_FLOOR {
                continue;
            }
            for (a, &pa_s) in ctx.second_obs[s].iter().enumerate() {
                if pa_s < PROB_FLOOR {
                    continue;
                }
                // posterior p(first | second = a) from the induced joint
                for (v, &pv_s) in ctx.first_obs[s].iter().enumerate() {
                    if pv_s < PROB_FLOOR {
                        continue;
                    }
                    let posterior = pva[v * na + a] / pa_marg[a];
                    cross -= ps * pa_s * pv_s * posterior.ln();
                }
            }
        }
        decomposed += w * (h_v - cross);
    }
    let direct = base.from_nats(direct);
    let decomposed = base.from_nats(decomposed);
    Ok(ConditionalDecomposition {
        direct,
        entropy_minus_cross_entropy: decomposed,
        residual: (direct - decomposed).abs(),
    })
}

/// Entropies, mutual informations, and identity residuals for one batch of
/// randomized checks; serializable for the CLI.
#[derive(Debug, Clone, Serialize, Default)]
pub struct InfoReport {
    pub entropies: BTreeMap<String, f64>,
    pub mutual_informations: BTreeMap<String, f64>,
    pub identity_residuals: BTreeMap<String, f64>,
}

/// The XOR joint: third variable is the parity of two fair bits. Its
/// interaction information is exactly -1 bit.
pub fn xor_joint() -> DiscreteJoint {
    let mut probs = vec![0.0; 8];
    for i in 0..2 {
        for j in 0..2 {
            let k = i ^ j;
            probs[(i * 2 + j) * 2 + k] = 0.25;
        }
    }
    DiscreteJoint::new(vec![2, 2, 2], probs).expect("xor joint is valid")
}

fn random_family<R: Rng>(rng: &mut R, contexts: usize, samples: usize, nv: usize, na: usize) -> FactoredFamily {
    let normalize = |v: &mut Vec<f64>| {
        let s: f64 = v.iter().sum();
        for x in v.iter_mut() {
            *x /= s;
        }
    };
    let mut prior: Vec<f64> = (0..contexts).map(|_| rng.gen::<f64>() + 0.1).collect();
    normalize(&mut prior);
    let ctxs = (0..contexts)
        .map(|_| {
            let mut sp: Vec<f64> = (0..samples).map(|_| rng.gen::<f64>() + 0.1).collect();
            normalize(&mut sp);
            let row = |rng: &mut R, n: usize| {
                let mut r: Vec<f64> = (0..n).map(|_| rng.gen::<f64>() + 0.05).collect();
                normalize(&mut r);
                r
            };
            FactoredContext {
                sample_prior: sp,
                first_obs: (0..samples).map(|_| row(rng, nv)).collect(),
                second_obs: (0..samples).map(|_| row(rng, na)).collect(),
            }
        })
        .collect();
    FactoredFamily { context_prior: prior, contexts: ctxs }
}

/// Run `trials` randomized identity checks (support sizes <= 4) plus the XOR
/// regression case. Residuals in the report are maxima over all trials.
pub fn verify_random_identities(seed: u64, trials: usize, base: LogBase) -> Result<InfoReport> {
    if trials == 0 {
        return Err(Error::InvalidArgument("trials must be positive".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut report = InfoReport::default();
    let bump = |map: &mut BTreeMap<String, f64>, key: &str, v: f64| {
        let e = map.entry(key.to_string()).or_insert(0.0);
        if v > *e {
            *e = v;
        }
    };
    for _ in 0..trials {
        let sizes: Vec<usize> = (0..3).map(|_| rng.gen_range(2..=4usize)).collect();
        let joint = DiscreteJoint::random(&mut rng, sizes.clone())?;

        // interaction information: inclusion-exclusion route vs MI chain route
        let triple = mutual_information_triple(&joint, base)?;
        let chain_route = mutual_information_pair(&joint, 0, 1, base)?
            - conditional_mutual_information(&joint, 0, 1, 2, base)?;
        bump(&mut report.identity_residuals, "interaction_vs_conditional_chain", (triple - chain_route).abs());

        // pairing construction collapses the combined-space entropies
        let pair2 = DiscreteJoint::random(&mut rng, vec![sizes[0], sizes[1]])?;
        let paired = pair2.with_pairing()?;
        let reduction = verify_subset_reduction(&paired, base)?;
        for (k, v) in reduction {
            bump(&mut report.identity_residuals, &format!("pairing_{k}"), v);
        }

        // chain decomposition of I(first; target)
        let chain = verify_chain_decomposition(&joint, base)?;
        bump(&mut report.identity_residuals, "chain_decomposition", chain.residual);

        // conditional-MI decomposition into entropy minus cross-entropy
        let family = random_family(&mut rng, 2, 3, 3, 3);
        let cond = verify_conditional_mi_decomposition(&family, base)?;
        bump(&mut report.identity_residuals, "conditional_mi_decomposition", cond.residual);

        bump(&mut report.entropies, "h(0)_max", entropy(&joint, &[0], base)?);
        bump(&mut report.entropies, "h(0,1,2)_max", entropy(&joint, &[0, 1, 2], base)?);
        bump(&mut report.mutual_informations, "i(0;1)_max", mutual_information_pair(&joint, 0, 1, base)?);
        bump(&mut report.mutual_informations, "interaction_max", triple);
    }
    // fixed regression: XOR interaction information is exactly -1 bit
    let xor = mutual_information_triple(&xor_joint(), LogBase::Bits)?;
    report
        .identity_residuals
        .insert("xor_interaction_is_minus_one_bit".into(), (xor + 1.0).abs());
    report.mutual_informations.insert("xor_interaction_bits".into(), xor);
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn coin() -> DiscreteJoint {
        // independent fair coins
        DiscreteJoint::new(vec![2, 2], vec![0.25; 4]).unwrap()
    }

    #[test]
    fn entropy_fair_coin_is_one_bit() {
        let h = entropy(&coin(), &[0], LogBase::Bits).unwrap();
        assert_abs_diff_eq!(h, 1.0, epsilon = 1e-12);
    }

    #[test]
    fn entropy_point_mass_is_zero() {
        let j = DiscreteJoint::new(vec![2, 2], vec![1.0, 0.0, 0.0, 0.0]).unwrap();
        assert_eq!(entropy(&j, &[0], LogBase::Nats).unwrap(), 0.0);
    }

    #[test]
    fn entropy_quarter_three_quarters() {
        // direct evaluation of -sum p log2 p for (0.25, 0.75)
        let j = DiscreteJoint::new(vec![2, 2], vec![0.25 * 0.5, 0.25 * 0.5, 0.75 * 0.5, 0.75 * 0.5]).unwrap();
        let oracle = -(0.25f64 * 0.25f64.log2() + 0.75 * 0.75f64.log2());
        let h = entropy(&j, &[0], LogBase::Bits).unwrap();
        assert_abs_diff_eq!(h, oracle, epsilon = 1e-12);
        assert_abs_diff_eq!(h, 0.8112781244591328, epsilon = 1e-12);
    }

    #[test]
    fn entropy_rejects_bad_subsets() {
        assert!(entropy(&coin(), &[], LogBase::Nats).is_err());
        assert!(entropy(&coin(), &[5], LogBase::Nats).is_err());
        assert!(entropy(&coin(), &[0, 0], LogBase::Nats).is_err());
    }

    #[test]
    fn mi_independent_coins_is_zero() {
        let mi = mutual_information_pair(&coin(), 0, 1, LogBase::Bits).unwrap();
        assert_abs_diff_eq!(mi, 0.0, epsilon = 1e-12);
    }

    #[test]
    fn mi_identical_coins_is_one_bit() {
        let j = DiscreteJoint::new(vec![2, 2], vec![0.5, 0.0, 0.0, 0.5]).unwrap();
        let mi = mutual_information_pair(&j, 0, 1, LogBase::Bits).unwrap();
        assert_abs_diff_eq!(mi, 1.0, epsilon = 1e-12);
    }

    #[test]
    fn mi_rejects_same_variable_twice() {
        assert!(mutual_information_pair(&coin(), 1, 1, LogBase::Nats).is_err());
    }

    #[test]
    fn mi_matches_kl_to_product_of_marginals() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let j = DiscreteJoint::random(&mut rng, vec![3, 3]).unwrap();
        // brute-force oracle: KL(joint || product of marginals) over all 9 cells
        let mut oracle = 0.0;
        for i in 0..3 {
            for k in 0..3 {
                let p = j.prob(&[i, k]);
                let pi: f64 = (0..3).map(|k2| j.prob(&[i, k2])).sum();
                let pk: f64 = (0..3).map(|i2| j.prob(&[i2, k])).sum();
                if p > 0.0 {
                    oracle += p * (p / (pi * pk)).ln();
                }
            }
        }
        let mi = mutual_information_pair(&j, 0, 1, LogBase::Nats).unwrap();
        assert_abs_diff_eq!(mi, oracle, epsilon = 1e-12);
    }

    #[test]
    fn triple_mi_worked_cases() {
        // three independent fair coins
        let indep = DiscreteJoint::new(vec![2, 2, 2], vec![0.125; 8]).unwrap();
        assert_abs_diff_eq!(mutual_information_triple(&indep, LogBase::Bits).unwrap(), 0.0, epsilon = 1e-12);

        // all three equal to one fair coin: telescopes to H = 1 bit
        let mut probs = vec![0.0; 8];
        probs[0] = 0.5; // (0,0,0)
        probs[7] = 0.5; // (1,1,1)
        let equal = DiscreteJoint::new(vec![2, 2, 2], probs).unwrap();
        assert_abs_diff_eq!(mutual_information_triple(&equal, LogBase::Bits).unwrap(), 1.0, epsilon = 1e-12);

        // independent coins with the pairing variable: enumerate 2x2x4 table
        let paired = coin().with_pairing().unwrap();
        assert_abs_diff_eq!(mutual_information_triple(&paired, LogBase::Bits).unwrap(), 0.0, epsilon = 1e-12);
    }

    #[test]
    fn triple_mi_rejects_wrong_arity() {
        assert!(mutual_information_triple(&coin(), LogBase::Nats).is_err());
    }

    #[test]
    fn xor_interaction_is_minus_one_bit() {
        let v = mutual_information_triple(&xor_joint(), LogBase::Bits).unwrap();
        assert_abs_diff_eq!(v, -1.0, epsilon = 1e-12);
    }

    #[test]
    fn subset_reduction_on_pairings() {
        // two independent coins: every combined-space entropy equals 2 bits
        let paired = coin().with_pairing().unwrap();
        let h = entropy(&paired, &[2], LogBase::Bits).unwrap();
        assert_abs_diff_eq!(h, 2.0, epsilon = 1e-12);
        for (_, r) in verify_subset_reduction(&paired, LogBase::Bits).unwrap() {
            assert!(r <= 1e-9);
        }

        // identical coins: all equal 1 bit
        let ident = DiscreteJoint::new(vec![2, 2], vec![0.5, 0.0, 0.0, 0.5]).unwrap().with_pairing().unwrap();
        assert_abs_diff_eq!(entropy(&ident, &[2], LogBase::Bits).unwrap(), 1.0, epsilon = 1e-12);
        for (_, r) in verify_subset_reduction(&ident, LogBase::Bits).unwrap() {
            assert!(r <= 1e-9);
        }

        // random 3x2 base joint
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let j = DiscreteJoint::random(&mut rng, vec![3, 2]).unwrap().with_pairing().unwrap();
        for (_, r) in verify_subset_reduction(&j, LogBase::Nats).unwrap() {
            assert!(r <= 1e-9);
        }
    }

    #[test]
    fn subset_reduction_reports_violating_tuple() {
        // third variable uniform regardless of the pair: not deterministic
        let j = DiscreteJoint::new(vec![2, 2, 2], vec![0.125; 8]).unwrap();
        let err = verify_subset_reduction(&j, LogBase::Nats).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("(0,0,0)") && msg.contains("(0,0,1)"), "{msg}");
    }

    #[test]
    fn chain_decomposition_worked_cases() {
        // fully independent: all three terms vanish
        let indep = DiscreteJoint::new(vec![2, 2, 2], vec![0.125; 8]).unwrap();
        let c = verify_chain_decomposition(&indep, LogBase::Bits).unwrap();
        assert_abs_diff_eq!(c.mi_first_target, 0.0, epsilon = 1e-12);
        assert_abs_diff_eq!(c.interaction, 0.0, epsilon = 1e-12);
        assert_abs_diff_eq!(c.conditional_mi, 0.0, epsilon = 1e-12);

        // first == target, second independent
        let mut probs = vec![0.0; 8];
        for j in 0..2 {
            probs[(0 * 2 + j) * 2 + 0] = 0.25;
            probs[(2 + j) * 2 + 1] = 0.25;
        }
        let j = DiscreteJoint::new(vec![2, 2, 2], probs).unwrap();
        let c = verify_chain_decomposition(&j, LogBase::Bits).unwrap();
        assert_abs_diff_eq!(c.mi_first_target, 1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(c.interaction, 0.0, epsilon = 1e-12);
        assert_abs_diff_eq!(c.conditional_mi, 1.0, epsilon = 1e-12);
        assert!(c.residual <= 1e-9);

        // random joint
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let j = DiscreteJoint::random(&mut rng, vec![2, 2, 2]).unwrap();
        let c = verify_chain_decomposition(&j, LogBase::Nats).unwrap();
        assert!(c.residual <= 1e-9);
    }

    #[test]
    fn conditional_decomposition_worked_cases() {
        // independent observations in every context: both routes are zero
        let indep = FactoredFamily {
            context_prior: vec![0.5, 0.5],
            contexts: vec![
                FactoredContext {
                    sample_prior: vec![1.0],
                    first_obs: vec![vec![0.3, 0.7]],
                    second_obs: vec![vec![0.6, 0.4]],
                },
                FactoredContext {
                    sample_prior: vec![1.0],
                    first_obs: vec![vec![0.5, 0.5]],
                    second_obs: vec![vec![0.2, 0.8]],
                },
            ],
        };
        let d = verify_conditional_mi_decomposition(&indep, LogBase::Nats).unwrap();
        assert_abs_diff_eq!(d.direct, 0.0, epsilon = 1e-12);
        assert_abs_diff_eq!(d.entropy_minus_cross_entropy, 0.0, epsilon = 1e-12);

        // first == second deterministically in one context, flat in the other:
        // both sides equal the weighted entropy of the first observation
        let det = FactoredFamily {
            context_prior: vec![0.25, 0.75],
            contexts: vec![
                FactoredContext {
                    sample_prior: vec![0.5, 0.5],
                    first_obs: vec![vec![1.0, 0.0], vec![0.0, 1.0]],
                    second_obs: vec![vec![1.0, 0.0], vec![0.0, 1.0]],
                },
                FactoredContext {
                    sample_prior: vec![1.0],
                    first_obs: vec![vec![0.5, 0.5]],
                    second_obs: vec![vec![0.5, 0.5]],
                },
            ],
        };
        let d = verify_conditional_mi_decomposition(&det, LogBase::Bits).unwrap();
        assert_abs_diff_eq!(d.direct, 0.25, epsilon = 1e-9); // 0.25 * H(fair coin)
        assert!(d.residual <= 1e-9);

        // random two-context 3x3 family
        let mut rng = ChaCha8Rng::seed_from_u64(19);
        let family = random_family(&mut rng, 2, 3, 3, 3);
        let d = verify_conditional_mi_decomposition(&family, LogBase::Nats).unwrap();
        assert!(d.residual <= 1e-9, "residual {}", d.residual);
    }

    #[test]
    fn conditional_decomposition_rejects_unnormalized_tables() {
        let bad = FactoredFamily {
            context_prior: vec![1.0],
            contexts: vec![FactoredContext {
                sample_prior: vec![1.0],
                first_obs: vec![vec![0.5, 0.2]],
                second_obs: vec![vec![0.5, 0.5]],
            }],
        };
        assert!(matches!(
            verify_conditional_mi_decomposition(&bad, LogBase::Nats),
            Err(Error::Precondition(_))
        ));
    }

    #[test]
    fn identity_checks_are_base_invariant() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let j = DiscreteJoint::random(&mut rng, vec![3, 2, 4]).unwrap();
        let nats = verify_chain_decomposition(&j, LogBase::Nats).unwrap();
        let bits = verify_chain_decomposition(&j, LogBase::Bits).unwrap();
        assert!(nats.residual <= 1e-9 && bits.residual <= 1e-9);
    }

    #[test]
    fn joint_validation_rejects_bad_tables() {
        assert!(DiscreteJoint::new(vec![2, 2], vec![0.5, 0.5, 0.1, -0.1]).is_err());
        assert!(DiscreteJoint::new(vec![2, 2], vec![0.3, 0.3, 0.3, 0.3]).is_err());
        assert!(DiscreteJoint::new(vec![2, 2], vec![0.5, 0.5]).is_err());
        assert!(DiscreteJoint::new(vec![2], vec![1.0]).is_err());
    }

    #[test]
    fn random_identity_report_is_clean() {
        let report = verify_random_identities(42, 25, LogBase::Nats).unwrap();
        for (name, r) in &report.identity_residuals {
            assert!(*r <= 1e-9, "{name} residual {r}");
        }
    }
}
