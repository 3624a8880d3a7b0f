//! Loading inputs, running configured methods, assembling the report.

use std::collections::BTreeMap;
use std::path::Path;

use serde::Serialize;
use serde_json::{json, Value};

use finitepop::audit::{
    audit_cfd_at, audit_compliance_stability, audit_dominance, audit_dr_condition, audit_iv_cfd,
    audit_iv_sp, audit_ml_groupwise_at, audit_rm_stability, audit_sp_at, avg_signed_difference,
    AuditResult, CellDiscrepancy,
};
use finitepop::bounds::{
    iv_ate_lower_bound, iv_ate_lower_bound_randomized, robins_manski_bounds, BoundReport,
    IvDataset, OutcomeBounds,
};
use finitepop::did::{did_predict, PanelDataset};
use finitepop::estimate::{ate_estimate, ApoMethod, EstimateReport};
use finitepop::index::common_support_check;
use finitepop::policy::{
    policy_value_estimate, stochastic_policy_value, FutureComposition, Policy,
};
use finitepop::regress::{
    check_linear_identification, fit_linear, iv_regression_policy_apo, ovb_consistency_check,
    TreatmentTarget,
};
use finitepop::simulate::{generate, GroundTruth, ScenarioSpec};
use finitepop::verify::{
    arm_mean_predictor, verify_coarsened, verify_doubly_robust, verify_exact_matching,
    verify_iv_lower_bound, verify_iv_randomized, verify_plugin, verify_rct, verify_robins_manski,
    DrArm, Verdict,
};
use finitepop::{
    io, CovariatePartition, FuturePopulation, Grouping, ObservedDataset, Predictor, TreatmentId,
    WeightFunction,
};

use crate::config::{MethodConfig, Mode, RunConfig};
use crate::failure::Failure;

/// Method kinds that read the outcome oracle and so cannot run in data mode.
const ORACLE_ONLY: &[(&str, &str)] = &[
    ("audit_cfd", "CFD unobservable without ground truth"),
    (
        "audit_signed_difference",
        "signed difference unobservable without ground truth",
    ),
    (
        "audit_area_wise",
        "area-wise error unobservable without ground truth",
    ),
    (
        "audit_dr_condition",
        "DR condition unobservable without ground truth",
    ),
    (
        "audit_dominance",
        "dominance unobservable without ground truth",
    ),
    ("audit_iv_cfd", "CFD unobservable without ground truth"),
    (
        "audit_rm_stability",
        "stability unobservable without ground truth",
    ),
];

pub const METHOD_KINDS: &[&str] = &[
    "rct",
    "exact_matching",
    "coarsened_matching",
    "plugin",
    "doubly_robust",
    "policy_value",
    "did",
    "iv_lower_bound",
    "iv_randomized",
    "robins_manski",
    "linear_regression",
    "ovb_check",
    "iv_regression",
    "audit_sp",
    "audit_cfd",
    "audit_signed_difference",
    "audit_area_wise",
    "audit_dr_condition",
    "audit_dominance",
    "audit_compliance",
    "audit_iv_sp",
    "audit_iv_cfd",
    "audit_rm_stability",
    "audit_support",
];

pub struct Inputs {
    pub mode: Mode,
    pub observed: Option<ObservedDataset>,
    pub future: Option<FuturePopulation>,
    pub panel: Option<PanelDataset>,
    pub truth: Option<GroundTruth>,
}

fn read_csv<T>(
    config: &RunConfig,
    path: &Path,
    what: &str,
    read: impl FnOnce(std::fs::File) -> finitepop::Result<T>,
) -> Result<T, Failure> {
    let path = config.resolve(path);
    let file = io::open(&path).map_err(|e| Failure::Schema(format!("{what}: {e}")))?;
    read(file).map_err(|e| Failure::input(&format!("{what} {}", path.display()), e))
}

pub fn load_spec(path: &Path, seed: Option<u64>) -> Result<ScenarioSpec, Failure> {
    let text = std::fs::read_to_string(path).map_err(|e| {
        Failure::Schema(format!("cannot read scenario spec {}: {e}", path.display()))
    })?;
    let mut spec = ScenarioSpec::from_toml(&text)
        .map_err(|e| Failure::input(&format!("scenario spec {}", path.display()), e))?;
    if let Some(seed) = seed {
        spec.seed = seed;
    }
    Ok(spec)
}

pub fn load_inputs(
    config: &RunConfig,
    mode: Option<Mode>,
    seed: Option<u64>,
) -> Result<Inputs, Failure> {
    let data = &config.data;
    let (observed, future, truth) = match &data.scenario {
        Some(spec_path) => {
            if data.observed.is_some() || data.future.is_some() {
                return Err(Failure::Schema(
                    "[data] takes either `scenario` or observed/future files".into(),
                ));
            }
            let spec = load_spec(&config.resolve(spec_path), seed.or(config.seed))?;
            let scenario = generate(&spec).map_err(|e| Failure::input("scenario", e))?;
            (
                Some(scenario.observed),
                Some(scenario.future),
                Some(scenario.truth),
            )
        }
        None => {
            let observed = match &data.observed {
                Some(p) => Some(read_csv(config, p, "observed data", |f| {
                    io::read_observed_csv(f, None)
                })?),
                None => None,
            };
            let treatments = observed.as_ref().map(|o| o.treatments().clone());
            let future = match &data.future {
                Some(p) => Some(read_csv(config, p, "future data", |f| {
                    io::read_future_csv(f, treatments)
                })?),
                None => None,
            };
            if let (Some(o), Some(f)) = (&observed, &future) {
                f.check_disjoint(o)
                    .map_err(|e| Failure::input("inputs", e))?;
            }
            let truth = match &future {
                Some(f) if f.is_oracle_mode() => Some(
                    GroundTruth::from_future(f).map_err(|e| Failure::input("future data", e))?,
                ),
                _ => None,
            };
            (observed, future, truth)
        }
    };
    let panel = match &data.panel {
        Some(p) => Some(read_csv(config, p, "panel", io::read_panel_csv)?),
        None => None,
    };
    let has_oracle = future.as_ref().is_some_and(|f| f.oracle().is_some());
    let mode = mode
        .or(config.mode)
        .unwrap_or(if has_oracle { Mode::Oracle } else { Mode::Data });
    if mode == Mode::Oracle && !has_oracle && (observed.is_some() || future.is_some()) {
        return Err(Failure::Schema(
            "oracle mode needs a scenario spec or future data with y_t<k> outcome columns".into(),
        ));
    }
    let (future, truth) = match mode {
        Mode::Oracle => (future, truth),
        Mode::Data => (future.map(|f| f.without_oracles()), None),
    };
    Ok(Inputs {
        mode,
        observed,
        future,
        panel,
        truth,
    })
}

#[derive(Debug, Default, Serialize)]
pub struct MethodOutput {
    pub kind: String,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub estimates: Vec<EstimateReport>,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub bounds: Vec<BoundReport>,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub audits: Vec<AuditResult>,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub verdicts: Vec<Verdict>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub details: Option<Value>,
}

struct Ctx<'a> {
    config: &'a RunConfig,
    inputs: &'a Inputs,
    method: &'a MethodConfig,
}

type Step<T> = Result<T, Failure>;

impl<'a> Ctx<'a> {
    fn fail(&self, cause: impl std::fmt::Display) -> Failure {
        Failure::precondition(&self.method.kind, cause)
    }

    fn lift<T>(&self, r: finitepop::Result<T>) -> Step<T> {
        r.map_err(|e| self.fail(e))
    }

    fn oracle(&self) -> bool {
        self.inputs.mode == Mode::Oracle
    }

    fn observed(&self) -> Step<&'a ObservedDataset> {
        self.inputs
            .observed
            .as_ref()
            .ok_or_else(|| self.fail("needs observed data ([data] observed or scenario)"))
    }

    fn future(&self) -> Step<&'a FuturePopulation> {
        self.inputs
            .future
            .as_ref()
            .ok_or_else(|| self.fail("needs a future population ([data] future or scenario)"))
    }

    fn iv(&self) -> Step<IvDataset> {
        self.lift(IvDataset::new(self.observed()?.clone()))
    }

    fn treatments(&self) -> Step<Vec<TreatmentId>> {
        let declared = self.observed()?.treatments();
        match &self.method.treatments {
            None => Ok(declared.iter().collect()),
            Some(list) => list
                .iter()
                .map(|&t| {
                    let t = TreatmentId(t);
                    self.lift(declared.check(t)).map(|_| t)
                })
                .collect(),
        }
    }

    fn number(&self, value: Option<f64>, name: &str) -> Step<f64> {
        value.ok_or_else(|| self.fail(format!("needs parameter `{name}`")))
    }

    fn partition(&self) -> Step<Option<CovariatePartition>> {
        match &self.method.partition {
            None => Ok(None),
            Some(p) => {
                let path = self.config.resolve(p);
                let text = std::fs::read_to_string(&path)
                    .map_err(|e| Failure::Schema(format!("partition {}: {e}", path.display())))?;
                io::read_partition_json(&text)
                    .map(Some)
                    .map_err(|e| Failure::input(&format!("partition {}", path.display()), e))
            }
        }
    }

    fn require_partition(&self) -> Step<CovariatePartition> {
        self.partition()?
            .ok_or_else(|| self.fail("needs parameter `partition`"))
    }

    /// The given partition, or singletons over the values seen in `J` and `I`.
    fn partition_or_singletons(&self) -> Step<CovariatePartition> {
        if let Some(p) = self.partition()? {
            return Ok(p);
        }
        let mut values = self.observed()?.distinct_covariates();
        if let Some(f) = &self.inputs.future {
            values.extend(f.distinct_covariates());
        }
        self.lift(CovariatePartition::singletons(values.iter()))
    }

    fn predictor(&self, default: &str) -> Step<Predictor> {
        let name = self.method.predictor.as_deref().unwrap_or(default);
        match name {
            "rct" => self.lift(Predictor::rct(self.observed()?)),
            "exact_matching" => self.lift(Predictor::exact_matching(
                self.observed()?,
                &self.treatments()?,
            )),
            "coarsened_matching" => {
                let partition = self.require_partition()?;
                self.lift(Predictor::coarsened_matching(
                    self.observed()?,
                    &partition,
                    &self.treatments()?,
                ))
            }
            "future_cell_means" => self.lift(Predictor::future_cell_means(self.future()?)),
            "arm_means" => self.lift(arm_mean_predictor(&self.iv()?)),
            path => read_csv(self.config, Path::new(path), "predictor", |f| {
                io::read_predictor_csv(f, path)
            }),
        }
    }

    fn weights(&self, t: TreatmentId) -> Step<WeightFunction> {
        match self.method.weights.as_deref() {
            None | Some("one") => Ok(WeightFunction::one()),
            Some("inverse_propensity") => {
                self.lift(WeightFunction::inverse_propensity(self.observed()?, t))
            }
            Some("composition") => self.lift(WeightFunction::composition_weights(
                self.observed()?,
                self.future()?,
                t,
            )),
            Some(path) => read_csv(
                self.config,
                Path::new(path),
                "weights",
                io::read_weights_csv,
            ),
        }
    }

    fn policy(&self) -> Step<Policy> {
        let path = self
            .method
            .policy
            .as_ref()
            .ok_or_else(|| self.fail("needs parameter `policy`"))?;
        read_csv(self.config, path, "policy", io::read_policy_csv)
    }

    fn apo_method(&self, name: &str) -> Step<ApoMethod> {
        Ok(match name {
            "rct" => ApoMethod::Rct,
            "exact_matching" => ApoMethod::ExactMatching,
            "coarsened_matching" => ApoMethod::CoarsenedMatching(self.require_partition()?),
            "plugin" => ApoMethod::Plugin(self.predictor("exact_matching")?),
            other => return Err(self.fail(format!("unknown estimator `{other}`"))),
        })
    }
}

/// Adds the supplied `eps`/`delta` as a guarantee, or the audited one from a verdict.
fn attach(report: EstimateReport, m: &MethodConfig, verdict: Option<&Verdict>) -> EstimateReport {
    match verdict {
        Some(v) => report.with_guarantee(v.eps, v.budget - v.eps),
        None => match (m.eps, m.delta) {
            (Some(e), Some(d)) => report.with_guarantee(e, d),
            _ => report,
        },
    }
}

fn with_ate(out: &mut MethodOutput) -> Result<(), finitepop::Error> {
    let find = |t: u32| {
        out.estimates
            .iter()
            .find(|e| e.treatment == Some(TreatmentId(t)))
    };
    if let (Some(a1), Some(a0)) = (find(1), find(0)) {
        let ate = ate_estimate(a1, a0)?;
        out.estimates.push(ate);
    }
    Ok(())
}

fn apo_estimates(ctx: &Ctx<'_>, out: &mut MethodOutput) -> Step<()> {
    let data = ctx.observed()?;
    let m = ctx.method;
    let method = match m.kind.as_str() {
        "rct" => ApoMethod::Rct,
        "exact_matching" => ApoMethod::ExactMatching,
        "coarsened_matching" => ApoMethod::CoarsenedMatching(ctx.require_partition()?),
        "plugin" => ApoMethod::Plugin(ctx.predictor("exact_matching")?),
        _ => unreachable!(),
    };
    for t in ctx.treatments()? {
        let report = ctx.lift(method.estimate(data, t))?;
        let verdict = if ctx.oracle() {
            let future = ctx.future()?;
            Some(ctx.lift(match &method {
                ApoMethod::Rct => verify_rct(data, future, t),
                ApoMethod::ExactMatching => verify_exact_matching(data, future, t),
                ApoMethod::CoarsenedMatching(p) => verify_coarsened(data, future, p, t),
                ApoMethod::Plugin(p) => {
                    verify_plugin(p, data, future, &ctx.partition_or_singletons()?, t)
                }
                ApoMethod::DoublyRobust { .. } => unreachable!(),
            })?)
        } else {
            None
        };
        out.estimates.push(attach(report, m, verdict.as_ref()));
        out.verdicts.extend(verdict);
    }
    ctx.lift(with_ate(out))
}

fn doubly_robust(ctx: &Ctx<'_>, out: &mut MethodOutput) -> Step<()> {
    let data = ctx.observed()?;
    let m = ctx.method;
    let p = ctx.predictor("exact_matching")?;
    let arm = match m.arm.as_deref() {
        Some("means") => Some(DrArm::Means),
        Some("weights") => Some(DrArm::Weights),
        Some(other) => {
            return Err(ctx.fail(format!("unknown arm `{other}` (expected means or weights)")))
        }
        None => match (m.predictor.as_deref(), m.weights.as_deref()) {
            (Some("future_cell_means"), _) => Some(DrArm::Means),
            (_, Some("composition")) => Some(DrArm::Weights),
            _ => None,
        },
    };
    for t in ctx.treatments()? {
        let w = ctx.weights(t)?;
        let report = ctx.lift(
            ApoMethod::DoublyRobust {
                predictor: p.clone(),
                weights: w.clone(),
            }
            .estimate(data, t),
        )?;
        let verdict = match (ctx.oracle(), arm) {
            (true, Some(arm)) => {
                Some(ctx.lift(verify_doubly_robust(&p, &w, data, ctx.future()?, t, arm))?)
            }
            _ => None,
        };
        out.estimates.push(attach(report, m, verdict.as_ref()));
        out.verdicts.extend(verdict);
    }
    if ctx.oracle() && arm.is_none() {
        out.details =
            Some(json!({"note": "no verdict: set `arm` to state which nuisance is correct"}));
    }
    ctx.lift(with_ate(out))
}

fn policy_value(ctx: &Ctx<'_>, out: &mut MethodOutput) -> Step<()> {
    let data = ctx.observed()?;
    let policy = ctx.policy()?;
    let report = if policy.is_deterministic() {
        let method = ctx.apo_method(ctx.method.estimator.as_deref().unwrap_or("exact_matching"))?;
        let weights;
        let composition = match &ctx.method.composition {
            Some(path) => {
                weights = read_csv(ctx.config, path, "composition", io::read_composition_csv)?;
                FutureComposition::Weights(&weights)
            }
            None => FutureComposition::Population(ctx.future()?),
        };
        ctx.lift(policy_value_estimate(&policy, &method, data, composition))?
    } else {
        let p = ctx.predictor("exact_matching")?;
        ctx.lift(stochastic_policy_value(&p, &policy, data))?
    };
    if ctx.oracle() {
        let future = ctx.future()?;
        let mut truth = finitepop::numeric::Accumulator::new();
        for u in future.units() {
            let probs = ctx.lift(policy.probabilities(&u.x))?;
            for (t, pr) in probs {
                if pr > 0.0 {
                    truth.add(pr * ctx.lift(future.outcome(u.id, t))?);
                }
            }
        }
        let truth = truth
            .mean()
            .ok_or_else(|| ctx.fail("future population is empty"))?;
        out.details = Some(json!({"truth": truth, "error": (report.estimate - truth).abs()}));
    }
    out.estimates.push(report);
    Ok(())
}

fn iv_bounds(ctx: &Ctx<'_>, out: &mut MethodOutput) -> Step<()> {
    let iv = ctx.iv()?;
    let m = ctx.method;
    let randomized = m.kind == "iv_randomized";
    if ctx.oracle() {
        let future = ctx.future()?;
        let v = if randomized {
            ctx.lift(verify_iv_randomized(&iv, future))?
        } else {
            ctx.lift(verify_iv_lower_bound(
                &ctx.predictor("arm_means")?,
                &iv,
                future,
            ))?
        };
        let bound = if randomized {
            ctx.lift(iv_ate_lower_bound_randomized(&iv, v.eps, v.delta))?
        } else {
            ctx.lift(iv_ate_lower_bound(
                &ctx.predictor("arm_means")?,
                &iv,
                v.eps,
                v.delta,
            ))?
        };
        out.bounds.push(bound);
        out.verdicts.push(v);
    } else {
        let (eps, delta) = (ctx.number(m.eps, "eps")?, ctx.number(m.delta, "delta")?);
        out.bounds.push(if randomized {
            ctx.lift(iv_ate_lower_bound_randomized(&iv, eps, delta))?
        } else {
            ctx.lift(iv_ate_lower_bound(
                &ctx.predictor("arm_means")?,
                &iv,
                eps,
                delta,
            ))?
        });
    }
    Ok(())
}

fn robins_manski(ctx: &Ctx<'_>, out: &mut MethodOutput) -> Step<()> {
    let iv = ctx.iv()?;
    let m = ctx.method;
    let bounds = ctx.lift(OutcomeBounds::new(
        ctx.number(m.k0, "k0")?,
        ctx.number(m.k1, "k1")?,
    ))?;
    for t in ctx.treatments()? {
        if ctx.oracle() {
            let v = ctx.lift(verify_robins_manski(&iv, ctx.future()?, t, bounds))?;
            out.bounds
                .push(ctx.lift(robins_manski_bounds(&iv, t, bounds, v.delta))?);
            out.verdicts.push(v);
        } else {
            out.bounds.push(ctx.lift(robins_manski_bounds(
                &iv,
                t,
                bounds,
                ctx.number(m.delta, "delta")?,
            ))?);
        }
    }
    Ok(())
}

fn regression(ctx: &Ctx<'_>, out: &mut MethodOutput) -> Step<()> {
    let data = ctx.observed()?;
    let m = ctx.method;
    match m.kind.as_str() {
        "linear_regression" => {
            let model = ctx.lift(fit_linear(data))?;
            let report = ctx.lift(check_linear_identification(
                &model,
                data,
                m.tolerance.unwrap_or(1e-9),
            ))?;
            out.details = Some(serde_json::to_value(report).expect("serializable"));
        }
        "ovb_check" => {
            let model = ctx.lift(fit_linear(data))?;
            let report = ctx.lift(ovb_consistency_check(data, &model))?;
            out.details = Some(serde_json::to_value(report).expect("serializable"));
        }
        "iv_regression" => {
            let target = match (m.target, &m.policy) {
                (Some(level), None) => TreatmentTarget::Level(level),
                (None, Some(_)) => TreatmentTarget::Policy(ctx.policy()?),
                _ => return Err(ctx.fail("needs exactly one of `target` or `policy`")),
            };
            let report = ctx.lift(iv_regression_policy_apo(
                &ctx.iv()?,
                &target,
                ctx.number(m.gamma, "gamma")?,
            ))?;
            out.estimates.push(report);
        }
        _ => unreachable!(),
    }
    Ok(())
}

fn audits(ctx: &Ctx<'_>, out: &mut MethodOutput) -> Step<()> {
    let kind = ctx.method.kind.as_str();
    let mut per_treatment = |name: &str, f: &dyn Fn(TreatmentId) -> Step<f64>| -> Step<()> {
        let mut result = AuditResult {
            assumption: name.into(),
            per_treatment: BTreeMap::new(),
            cells: vec![],
            holds: None,
        };
        for t in ctx.treatments()? {
            let value = f(t)?;
            result.per_treatment.insert(t, value);
            result.cells.push(CellDiscrepancy {
                group: "all".into(),
                treatment: Some(t),
                instrument: None,
                value,
            });
        }
        out.audits.push(result);
        Ok(())
    };
    match kind {
        "audit_sp" => {
            let p = ctx.predictor("rct")?;
            let r = ctx.lift(audit_sp_at(
                &p,
                ctx.observed()?,
                ctx.future()?,
                &ctx.treatments()?,
            ))?;
            out.audits.push(r);
        }
        "audit_cfd" => {
            let p = ctx.predictor("rct")?;
            let r = ctx.lift(audit_cfd_at(&p, ctx.future()?, &ctx.treatments()?))?;
            out.audits.push(r);
        }
        "audit_signed_difference" => {
            let partition = ctx.partition()?;
            let (data, future) = (ctx.observed()?, ctx.future()?);
            per_treatment("avg_signed_difference", &|t| {
                ctx.lift(avg_signed_difference(data, future, t, partition.as_ref()))
            })?;
        }
        "audit_area_wise" => {
            let p = ctx.predictor("exact_matching")?;
            let partition = ctx.partition_or_singletons()?;
            let r = ctx.lift(audit_ml_groupwise_at(
                &p,
                ctx.observed()?,
                ctx.future()?,
                &partition,
                &ctx.treatments()?,
            ))?;
            out.audits.push(r);
        }
        "audit_dr_condition" => {
            let (data, future) = (ctx.observed()?, ctx.future()?);
            per_treatment("dr_condition", &|t| {
                ctx.lift(audit_dr_condition(data, future, t, &ctx.weights(t)?))
            })?;
        }
        "audit_dominance" => out.audits.push(ctx.lift(audit_dominance(ctx.future()?))?),
        "audit_compliance" => out
            .audits
            .push(ctx.lift(audit_compliance_stability(ctx.observed()?, ctx.future()?))?),
        "audit_iv_sp" => {
            let p = ctx.predictor("arm_means")?;
            out.audits
                .push(ctx.lift(audit_iv_sp(&p, ctx.observed()?, ctx.future()?))?);
        }
        "audit_iv_cfd" => {
            let p = ctx.predictor("arm_means")?;
            out.audits.push(ctx.lift(audit_iv_cfd(&p, ctx.future()?))?);
        }
        "audit_rm_stability" => {
            let (data, future) = (ctx.observed()?, ctx.future()?);
            per_treatment("rm_stability", &|t| {
                ctx.lift(audit_rm_stability(data, future, t))
            })?;
        }
        "audit_support" => {
            let partition = ctx.partition()?;
            let report = ctx.lift(common_support_check(
                ctx.observed()?,
                Grouping::from_partition(partition.as_ref()),
            ))?;
            out.details = Some(serde_json::to_value(report).expect("serializable"));
        }
        _ => unreachable!(),
    }
    Ok(())
}

pub fn run_method(
    config: &RunConfig,
    inputs: &Inputs,
    method: &MethodConfig,
) -> Step<MethodOutput> {
    let ctx = Ctx {
        config,
        inputs,
        method,
    };
    let kind = method.kind.as_str();
    if !METHOD_KINDS.contains(&kind) {
        return Err(Failure::Schema(format!(
            "unknown method kind `{kind}`; expected one of {}",
            METHOD_KINDS.join(", ")
        )));
    }
    if inputs.mode == Mode::Data {
        if let Some((_, cause)) = ORACLE_ONLY.iter().find(|(k, _)| *k == kind) {
            return Err(ctx.fail(cause));
        }
    }
    let mut out = MethodOutput {
        kind: kind.to_string(),
        ..Default::default()
    };
    match kind {
        "rct" | "exact_matching" | "coarsened_matching" | "plugin" => {
            apo_estimates(&ctx, &mut out)?
        }
        "doubly_robust" => doubly_robust(&ctx, &mut out)?,
        "policy_value" => policy_value(&ctx, &mut out)?,
        "did" => {
            let panel = inputs
                .panel
                .as_ref()
                .ok_or_else(|| ctx.fail("needs panel data ([data] panel)"))?;
            let (via_a, via_b) = ctx.lift(did_predict(panel))?;
            out.estimates.extend([via_a, via_b]);
        }
        "iv_lower_bound" | "iv_randomized" => iv_bounds(&ctx, &mut out)?,
        "robins_manski" => robins_manski(&ctx, &mut out)?,
        "linear_regression" | "ovb_check" | "iv_regression" => regression(&ctx, &mut out)?,
        _ => audits(&ctx, &mut out)?,
    }
    Ok(out)
}

#[derive(Debug, Serialize)]
pub struct Report {
    pub schema: u32,
    pub mode: &'static str,
    pub inputs: Value,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub truth: Option<GroundTruth>,
    pub methods: Vec<MethodOutput>,
    /// All oracle verdicts pass (vacuously true in data mode).
    pub pass: bool,
    /// Run-specific metadata kept apart from the results.
    pub metadata: Value,
}

impl Report {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("serializable") + "\n"
    }
}

pub fn run(config: &RunConfig, inputs: &Inputs, methods: &[MethodConfig]) -> Step<Report> {
    // Every method is validated by running it; the report is only assembled
    // once all have succeeded.
    let outputs: Vec<MethodOutput> = methods
        .iter()
        .map(|m| run_method(config, inputs, m))
        .collect::<Step<_>>()?;
    let pass = outputs.iter().flat_map(|o| &o.verdicts).all(|v| v.pass);
    Ok(Report {
        schema: crate::config::SCHEMA_VERSION,
        mode: inputs.mode.name(),
        inputs: json!({
            "observed": inputs.observed.as_ref().map(|o| json!({"units": o.len(), "fingerprint": o.fingerprint()})),
            "future": inputs.future.as_ref().map(|f| json!({"units": f.len(), "oracle": f.oracle().is_some()})),
            "panel": inputs.panel.is_some(),
        }),
        truth: inputs.truth.clone(),
        methods: outputs,
        pass,
        metadata: json!({"tool": "finitepop", "version": env!("CARGO_PKG_VERSION")}),
    })
}

/// Audit kinds run by `audit` when the config lists none.
pub fn default_audits(inputs: &Inputs) -> Vec<MethodConfig> {
    let mut kinds = vec!["audit_support"];
    if inputs.future.is_some() {
        kinds.push("audit_sp");
        if inputs.mode == Mode::Oracle {
            kinds.extend(["audit_cfd", "audit_signed_difference"]);
        }
        let instrumented = inputs.observed.as_ref().is_some_and(|o| o.has_instrument())
            && inputs
                .future
                .as_ref()
                .is_some_and(|f| f.compliance().is_some());
        if instrumented {
            kinds.push("audit_compliance");
            if inputs.mode == Mode::Oracle {
                kinds.push("audit_dominance");
            }
        }
    }
    kinds
        .into_iter()
        .map(|k| MethodConfig {
            kind: k.into(),
            ..Default::default()
        })
        .collect()
}
