//! Mini-batch Adam training with dev-driven learning-rate decay.
//!
//! Each epoch shuffles the corpus with a run-seeded RNG, accumulates
//! gradients over batches, and takes one Adam step per batch on the
//! batch-mean gradient. After every epoch the model greedy-decodes the
//! dev set; when exact match fails to improve, the learning rate is
//! multiplied by `lr_decay`. The parameters from the best dev epoch are
//! kept, and a non-finite loss or gradient aborts training with those
//! best parameters restored.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::corpus::Example;
use crate::inference::{greedy_decode, DecodeOptions};
use crate::tensor::{Adam, ParamSet, Tape, Tensor, Var};

use super::{Model, Query};

/// Knobs for one training run.
#[derive(Debug, Clone)]
pub struct TrainOptions {
    pub epochs: usize,
    pub batch_size: usize,
    /// Initial Adam learning rate.
    pub lr: f64,
    /// Multiplier applied to the learning rate after an epoch whose dev
    /// exact match does not improve on the best seen so far.
    pub lr_decay: f64,
    /// Seed for shuffling and for per-example dropout streams.
    pub seed: u64,
    /// Stop as soon as dev exact match reaches this percentage.
    pub stop_at_dev_em: Option<f64>,
}

impl Default for TrainOptions {
    fn default() -> Self {
        TrainOptions {
            epochs: 30,
            batch_size: 20,
            lr: 1e-3,
            lr_decay: 0.2,
            seed: 1,
            stop_at_dev_em: None,
        }
    }
}

/// One epoch's summary.
#[derive(Debug, Clone)]
pub struct EpochLog {
    pub epoch: usize,
    /// Mean per-example negative log likelihood over the epoch.
    pub mean_loss: f64,
    /// Dev exact match in percent, 0 when there is no dev set.
    pub dev_em: f64,
    /// Learning rate the epoch was trained with.
    pub lr: f64,
}

/// Outcome of a training run.
#[derive(Debug, Clone)]
pub struct TrainLog {
    pub epochs: Vec<EpochLog>,
    pub best_dev_em: f64,
    pub best_epoch: Option<usize>,
    /// True when a non-finite loss or gradient stopped the run early.
    pub diverged: bool,
}

/// How a system plugs into the shared training loop: its per-example loss,
/// its dev metric, and where its parameters live.
pub(crate) struct TrainSpec<M> {
    pub loss: fn(&M, &mut Tape, &Example) -> Var,
    pub dev_em: fn(&M, &[Example]) -> f64,
    pub params: fn(&mut M) -> &mut ParamSet,
}

/// The schedule shared by every trainable system. Trains `model` in place
/// and leaves it holding the best-dev parameters.
pub(crate) fn run_train<M>(
    model: &mut M,
    corpus: &[Example],
    dev: &[Example],
    opts: &TrainOptions,
    spec: TrainSpec<M>,
) -> TrainLog {
    assert!(!corpus.is_empty(), "cannot train on an empty corpus");
    assert!(opts.batch_size > 0, "batch size must be positive");

    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut adam = Adam::new();
    let mut lr = opts.lr;
    let mut best: Option<(f64, usize, Vec<Tensor>)> = None;
    let mut log = TrainLog {
        epochs: Vec::new(),
        best_dev_em: 0.0,
        best_epoch: None,
        diverged: false,
    };

    'run: for epoch in 0..opts.epochs {
        let mut order: Vec<usize> = (0..corpus.len()).collect();
        order.shuffle(&mut rng);

        let mut total_loss = 0.0;
        for batch in order.chunks(opts.batch_size) {
            (spec.params)(model).zero_grads();
            for &i in batch {
                let ex = &corpus[i];
                let mut tape = Tape::new(true, example_seed(opts.seed, epoch, i));
                let loss = (spec.loss)(model, &mut tape, ex);
                let v = tape.data(loss)[0];
                if !v.is_finite() {
                    log.diverged = true;
                    break 'run;
                }
                total_loss += v;
                tape.backward(loss, (spec.params)(model));
            }
            (spec.params)(model).scale_grads(1.0 / batch.len() as f64);
            if adam.step((spec.params)(model), lr).is_err() {
                log.diverged = true;
                break 'run;
            }
        }

        let dev_em = (spec.dev_em)(model, dev);
        log.epochs.push(EpochLog {
            epoch,
            mean_loss: total_loss / corpus.len() as f64,
            dev_em,
            lr,
        });

        // An empty dev set gives no signal; keep the latest parameters.
        let improved = dev.is_empty() || best.as_ref().is_none_or(|(b, _, _)| dev_em > *b);
        if improved {
            best = Some((dev_em, epoch, snapshot((spec.params)(model))));
        } else {
            lr *= opts.lr_decay;
        }

        if opts.stop_at_dev_em.is_some_and(|t| dev_em >= t) {
            break;
        }
    }

    if let Some((em, epoch, values)) = best {
        restore((spec.params)(model), &values);
        log.best_dev_em = em;
        log.best_epoch = Some(epoch);
    }
    log
}

/// Trains `model` in place and leaves it holding the best-dev parameters.
pub fn train(model: &mut Model, corpus: &[Example], dev: &[Example], opts: &TrainOptions) -> TrainLog {
    run_train(
        model,
        corpus,
        dev,
        opts,
        TrainSpec {
            loss: |m, tape, ex| m.example_loss(tape, ex),
            dev_em: greedy_exact_match,
            params: |m| &mut m.params,
        },
    )
}

/// Percentage of examples whose greedy decode reproduces the reference
/// tokens exactly. Returns 0 for an empty slice.
pub fn greedy_exact_match(model: &Model, examples: &[Example]) -> f64 {
    if examples.is_empty() {
        return 0.0;
    }
    let opts = DecodeOptions::from_config(&model.config);
    let hits = examples
        .iter()
        .filter(|ex| {
            let got = greedy_decode(model, &model.grammar, Query::from_example(ex), &opts);
            !got.truncated
                && model.grammar.realize(&ex.target).is_ok_and(|want| got.tokens == want)
        })
        .count();
    100.0 * hits as f64 / examples.len() as f64
}

fn snapshot(params: &ParamSet) -> Vec<Tensor> {
    params.ids().map(|id| params.value(id).clone()).collect()
}

fn restore(params: &mut ParamSet, values: &[Tensor]) {
    for (id, v) in params.ids().collect::<Vec<_>>().into_iter().zip(values) {
        *params.value_mut(id) = v.clone();
    }
}

fn example_seed(seed: u64, epoch: usize, index: usize) -> u64 {
    seed ^ (epoch as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15)
        ^ (index as u64).wrapping_mul(0xD1B5_4A32_D192_ED03)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{build_vocab, generate_synthetic, VocabThresholds};
    use crate::model::ModelConfig;

    fn setup(n: usize, hidden: usize, seed: u64) -> (Model, Vec<Example>) {
        let ds = generate_synthetic(n, seed);
        let vocab = build_vocab(
            &ds.grammar,
            &ds.examples,
            VocabThresholds { identifiers: 1, types: 1, rules: 1 },
        )
        .expect("vocab");
        let model = Model::new(ModelConfig::tiny(hidden), ds.grammar, vocab, seed);
        (model, ds.examples)
    }

    #[test]
    fn loss_decreases_over_adam_steps_on_one_example() {
        let (mut model, examples) = setup(5, 8, 11);
        let one = &examples[..1];
        let opts = TrainOptions {
            epochs: 50,
            batch_size: 1,
            ..TrainOptions::default()
        };
        let log = train(&mut model, one, &[], &opts);
        assert_eq!(log.epochs.len(), 50);
        assert!(!log.diverged);
        for w in log.epochs.windows(2) {
            assert!(
                w[1].mean_loss < w[0].mean_loss,
                "loss rose from {} to {} at epoch {}",
                w[0].mean_loss,
                w[1].mean_loss,
                w[1].epoch
            );
        }
    }

    #[test]
    fn plateau_cuts_learning_rate_to_a_fifth() {
        let (mut model, examples) = setup(4, 8, 3);
        // An untrained model will not exact-match anything, so dev EM sits
        // at 0 and every epoch after the first counts as a plateau.
        let opts = TrainOptions {
            epochs: 3,
            lr: 1e-3,
            ..TrainOptions::default()
        };
        let log = train(&mut model, &examples, &examples[..2], &opts);
        assert!(!log.diverged);
        assert_eq!(log.epochs[0].lr, 1e-3);
        assert_eq!(log.epochs[1].lr, 1e-3);
        assert_eq!(log.epochs[2].lr, 2e-4);
    }

    #[test]
    fn same_seed_reproduces_the_loss_curve() {
        let (mut a, examples) = setup(6, 8, 7);
        let (mut b, _) = setup(6, 8, 7);
        let opts = TrainOptions {
            epochs: 2,
            batch_size: 3,
            ..TrainOptions::default()
        };
        let la = train(&mut a, &examples, &[], &opts);
        let lb = train(&mut b, &examples, &[], &opts);
        for (x, y) in la.epochs.iter().zip(&lb.epochs) {
            assert_eq!(x.mean_loss, y.mean_loss);
        }
    }

    #[test]
    fn non_finite_loss_aborts_instead_of_panicking() {
        let (mut model, examples) = setup(4, 8, 5);
        // Blow up the output rows so some gold rule's probability
        // underflows to zero and the negative log likelihood is infinite.
        let out = model.pids.out_r;
        for v in model.params.value_mut(out).data_mut().iter_mut() {
            *v = if *v > 0.0 { 1e4 } else { -1e4 };
        }
        let log = train(&mut model, &examples, &[], &TrainOptions::default());
        assert!(log.diverged);
        assert!(log.epochs.len() <= 1);
    }

    #[test]
    fn best_dev_parameters_are_restored_at_the_end() {
        let (mut model, examples) = setup(3, 16, 9);
        let opts = TrainOptions {
            epochs: 60,
            batch_size: 3,
            lr_decay: 1.0,
            stop_at_dev_em: Some(100.0),
            ..TrainOptions::default()
        };
        let log = train(&mut model, &examples, &examples, &opts);
        assert!(!log.diverged);
        let em = greedy_exact_match(&model, &examples);
        assert_eq!(em, log.best_dev_em);
        if let Some(best) = log.best_epoch {
            assert_eq!(log.epochs[best].dev_em, log.best_dev_em);
        }
    }

    #[test]
    #[should_panic(expected = "empty corpus")]
    fn refuses_an_empty_corpus() {
        let (mut model, _) = setup(3, 8, 2);
        train(&mut model, &[], &[], &TrainOptions::default());
    }
}
