use std::collections::BTreeSet;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{ParamId, ParameterStore, Real, Tape, TensorError, Var};

#[derive(Clone, Debug)]
pub struct GradCheckConfig {
    /// Central-difference half step.
    pub step: f64,
    /// Number of distinct scalar coordinates to compare.
    pub samples: usize,
    pub seed: u64,
    /// Lower bound on the relative-error denominator, so gradients that are
    /// zero in both routes compare as exact.
    pub floor: f64,
}

impl GradCheckConfig {
    /// Step and floor suited to the element type's precision when the
    /// differences are taken in that same precision.
    pub fn for_precision<T: Real>(samples: usize, seed: u64) -> Self {
        let (step, floor) = if T::BYTES == 4 { (1e-2, 0.1) } else { (1e-6, 1e-3) };
        Self {
            step,
            samples,
            seed,
            floor,
        }
    }

    /// Settings for [`finite_difference_check_against`], whose differences
    /// are taken in 64-bit arithmetic.
    pub fn reference(samples: usize, seed: u64) -> Self {
        Self::for_precision::<f64>(samples, seed)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Coordinate {
    pub param: String,
    pub index: usize,
    pub analytic: f64,
    pub numeric: f64,
    pub rel_error: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    pub checked: usize,
    pub worst: Option<Coordinate>,
}

fn eval<T, E, F>(store: &ParameterStore<T>, loss_fn: &F) -> Result<T, E>
where
    T: Real,
    F: for<'a> Fn(&mut Tape<'a, T>) -> Result<Var, E>,
{
    let mut tape = Tape::new(store);
    let v = loss_fn(&mut tape)?;
    Ok(tape.value(v).data()[0])
}

/// Evaluates the loss twice, rejects a non-repeatable loss, and returns the
/// tape gradient of every parameter as f64.
fn analytic_gradients<T, E, F>(store: &ParameterStore<T>, loss_fn: &F) -> Result<Vec<Vec<f64>>, E>
where
    T: Real,
    E: From<TensorError>,
    F: for<'a> Fn(&mut Tape<'a, T>) -> Result<Var, E>,
{
    let first = eval(store, loss_fn)?;
    let second = eval(store, loss_fn)?;
    if !same_bits(first, second) {
        return Err(TensorError::NonDeterministic {
            first: first.to_f64().unwrap_or(f64::NAN),
            second: second.to_f64().unwrap_or(f64::NAN),
        }
        .into());
    }
    let mut tape = Tape::new(store);
    let loss = loss_fn(&mut tape)?;
    let grads = tape.backward(loss)?;
    Ok(store
        .ids()
        .map(|id| match grads.param(id) {
            Some(g) => g.iter().map(|x| x.to_f64().unwrap_or(f64::NAN)).collect(),
            None => vec![0.0; store.value(id).len()],
        })
        .collect())
}

/// Central differences on sampled coordinates of `store`, compared with
/// `analytic` (laid out like `store`).
fn numeric_sweep<T, E, F>(
    analytic: &[Vec<f64>],
    store: &mut ParameterStore<T>,
    loss_fn: &F,
    cfg: &GradCheckConfig,
) -> Result<GradCheckReport, E>
where
    T: Real,
    F: for<'a> Fn(&mut Tape<'a, T>) -> Result<Var, E>,
{
    let total = store.num_scalars();
    let wanted = cfg.samples.min(total);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut picked = BTreeSet::new();
    while picked.len() < wanted {
        picked.insert(rng.gen_range(0..total));
    }

    let offsets: Vec<(ParamId, usize)> = {
        let mut acc = 0;
        store
            .ids()
            .map(|id| {
                let start = acc;
                acc += store.value(id).len();
                (id, start)
            })
            .collect()
    };

    let h = T::lit(cfg.step);
    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        checked: 0,
        worst: None,
    };
    for flat in picked {
        let pos = offsets.partition_point(|&(_, start)| start <= flat) - 1;
        let (id, start) = offsets[pos];
        let index = flat - start;
        let original = store.value(id).data()[index];

        store.value_mut(id).data_mut()[index] = original + h;
        let plus = eval(store, loss_fn);
        store.value_mut(id).data_mut()[index] = original - h;
        let minus = eval(store, loss_fn);
        store.value_mut(id).data_mut()[index] = original;
        let (plus, minus) = (plus?, minus?);

        let numeric = ((plus - minus) / (h + h)).to_f64().unwrap_or(f64::NAN);
        let a = analytic[id.index()][index];
        let denom = a.abs().max(numeric.abs()).max(cfg.floor);
        let rel = if a == numeric { 0.0 } else { (a - numeric).abs() / denom };
        report.checked += 1;
        if rel > report.max_rel_error || rel.is_nan() || report.worst.is_none() {
            report.max_rel_error = if rel.is_nan() { f64::INFINITY } else { rel.max(report.max_rel_error) };
            report.worst = Some(Coordinate {
                param: store.name(id).to_string(),
                index,
                analytic: a,
                numeric,
                rel_error: rel,
            });
        }
    }
    Ok(report)
}

/// Compares tape gradients with central finite differences
/// `(L(p+h) − L(p−h)) / 2h` on sampled coordinates and returns the worst
/// relative error `|a − n| / max(|a|, |n|, floor)`.
///
/// `store` is restored to its original values on return and its gradient
/// buffers are left untouched.
pub fn finite_difference_check<T, E, F>(
    loss_fn: F,
    store: &mut ParameterStore<T>,
    cfg: &GradCheckConfig,
) -> Result<GradCheckReport, E>
where
    T: Real,
    E: From<TensorError>,
    F: for<'a> Fn(&mut Tape<'a, T>) -> Result<Var, E>,
{
    let analytic = analytic_gradients(store, &loss_fn)?;
    numeric_sweep(&analytic, store, &loss_fn, cfg)
}

/// Like [`finite_difference_check`], but the differences are taken on
/// `reference`, a 64-bit copy of `store` evaluated by `reference_fn`.
/// Checks 32-bit gradients without 32-bit roundoff forcing a step large
/// enough to straddle ReLU kinks.
pub fn finite_difference_check_against<T, E, F, G>(
    loss_fn: F,
    store: &ParameterStore<T>,
    reference_fn: G,
    reference: &mut ParameterStore<f64>,
    cfg: &GradCheckConfig,
) -> Result<GradCheckReport, E>
where
    T: Real,
    E: From<TensorError>,
    F: for<'a> Fn(&mut Tape<'a, T>) -> Result<Var, E>,
    G: for<'a> Fn(&mut Tape<'a, f64>) -> Result<Var, E>,
{
    let same_layout = store.len() == reference.len()
        && store
            .ids()
            .zip(reference.ids())
            .all(|(a, b)| store.name(a) == reference.name(b) && store.value(a).shape() == reference.value(b).shape());
    if !same_layout {
        return Err(TensorError::ReferenceLayout.into());
    }
    let analytic = analytic_gradients(store, &loss_fn)?;
    numeric_sweep(&analytic, reference, &reference_fn, cfg)
}

fn same_bits<T: Real>(a: T, b: T) -> bool {
    let mut x = Vec::with_capacity(T::BYTES);
    let mut y = Vec::with_capacity(T::BYTES);
    a.write_le(&mut x);
    b.write_le(&mut y);
    x == y
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Tensor;
    use std::cell::Cell;

    #[test]
    fn quadratic_is_exact() {
        let mut store = ParameterStore::<f64>::new();
        let p = store.add("p", Tensor::vector(vec![3.0]));
        let cfg = GradCheckConfig {
            step: 1e-4,
            samples: 1,
            seed: 0,
            floor: 1e-12,
        };
        let report = finite_difference_check::<_, TensorError, _>(
            |tape| {
                let v = tape.param(p);
                let sq = tape.mul(v, v)?;
                Ok(tape.sum(sq))
            },
            &mut store,
            &cfg,
        )
        .unwrap();
        assert!(report.max_rel_error < 1e-8, "{report:?}");
        assert_eq!(store.value(p).data(), &[3.0]);
    }

    #[test]
    fn ignored_parameter_reports_zero() {
        let mut store = ParameterStore::<f64>::new();
        let _p = store.add("p", Tensor::vector(vec![1.0, 2.0]));
        let cfg = GradCheckConfig::for_precision::<f64>(2, 1);
        let report = finite_difference_check::<_, TensorError, _>(
            |tape| Ok(tape.constant(Tensor::scalar(5.0))),
            &mut store,
            &cfg,
        )
        .unwrap();
        assert_eq!(report.max_rel_error, 0.0);
        assert_eq!(report.checked, 2);
    }

    #[test]
    fn nondeterministic_loss_is_rejected() {
        let mut store = ParameterStore::<f64>::new();
        store.add("p", Tensor::vector(vec![1.0]));
        let counter = Cell::new(0.0);
        let cfg = GradCheckConfig::for_precision::<f64>(1, 1);
        let err = finite_difference_check::<_, TensorError, _>(
            |tape| {
                counter.set(counter.get() + 1.0);
                Ok(tape.constant(Tensor::scalar(counter.get())))
            },
            &mut store,
            &cfg,
        )
        .unwrap_err();
        assert!(matches!(err, TensorError::NonDeterministic { .. }));
    }

    #[test]
    fn single_precision_against_double_reference() {
        let mut store = ParameterStore::<f32>::new();
        let p = store.add("p", Tensor::vector(vec![0.3, -1.7, 2.5]));
        let mut reference = store.cast::<f64>();
        fn cube<T: Real>(tape: &mut Tape<'_, T>, p: ParamId) -> Result<Var, TensorError> {
            let v = tape.param(p);
            let sq = tape.mul(v, v)?;
            let cu = tape.mul(sq, v)?;
            Ok(tape.sum(cu))
        }
        let report = finite_difference_check_against(
            |tape| cube(tape, p),
            &store,
            |tape| cube(tape, p),
            &mut reference,
            &GradCheckConfig::reference(3, 0),
        )
        .unwrap();
        assert_eq!(report.checked, 3);
        assert!(report.max_rel_error < 1e-6, "{report:?}");
    }

    #[test]
    fn reference_with_other_layout_is_rejected() {
        let mut store = ParameterStore::<f32>::new();
        let p = store.add("p", Tensor::vector(vec![1.0, 2.0]));
        let mut reference = ParameterStore::<f64>::new();
        reference.add("p", Tensor::vector(vec![1.0]));
        let err = finite_difference_check_against::<_, TensorError, _, _>(
            |tape| Ok(tape.param(p)),
            &store,
            |tape| Ok(tape.param(p)),
            &mut reference,
            &GradCheckConfig::reference(1, 0),
        )
        .unwrap_err();
        assert!(matches!(err, TensorError::ReferenceLayout));
    }
}
