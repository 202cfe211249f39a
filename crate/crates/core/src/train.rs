//! Plain minibatch SGD on softmax cross-entropy, logging every epoch.

use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::dataset::Dataset;
use crate::engine::{self, backward_from};
use crate::error::{Error, Result};
use crate::metrics::cross_entropy;
use crate::model::{ModelState, NodeParams};
use crate::runlog::{RunLog, RunMeta};
use crate::transition::TransitionFunction;

pub const LOSS_SERIES: &str = "train/loss";
pub const ACCURACY_SERIES: &str = "train/accuracy";

#[derive(Debug)]
pub struct TrainOutcome {
    pub state: ModelState,
    pub run: RunLog,
    /// Mean training loss of every completed epoch.
    pub epoch_losses: Vec<f64>,
    /// Training stopped early because the loss or a parameter went non-finite;
    /// `state` holds the last finite parameters.
    pub diverged: bool,
}

fn all_finite(state: &ModelState) -> bool {
    state
        .parameters
        .values()
        .all(|p| p.weights.data.iter().chain(&p.bias.data).all(|v| v.is_finite()))
}

/// Trains a copy of `state` for `state.hyperparams.epochs` epochs. The run is
/// written to `run_dir`; after every epoch the parameter summaries, the
/// epoch loss and accuracy, and a checkpoint are logged. `on_epoch` receives
/// the 1-based index of each finished epoch.
pub fn train(
    state: &ModelState,
    dataset: &Dataset,
    run_dir: &Path,
    run_id: &str,
    on_epoch: impl FnMut(u32),
) -> Result<TrainOutcome> {
    let hp = &state.hyperparams;
    train_with(state, dataset, run_dir, run_id, hp.epochs, hp.seed, on_epoch)
}

/// Like [`train`] with the epoch count and shuffle seed overridden. The new
/// state records the values actually used in its hyperparameters.
pub fn train_with(
    state: &ModelState,
    dataset: &Dataset,
    run_dir: &Path,
    run_id: &str,
    epochs: u32,
    seed: u64,
    mut on_epoch: impl FnMut(u32),
) -> Result<TrainOutcome> {
    if dataset.train.is_empty() {
        return Err(Error::InvalidInput(format!("dataset {:?} has no training samples", dataset.dataset_id)));
    }
    if dataset.input_shape != state.graph.input_shape {
        return Err(Error::InvalidInput(format!(
            "dataset input shape {:?} does not match model input shape {:?}",
            dataset.input_shape, state.graph.input_shape
        )));
    }
    if dataset.num_classes > state.graph.num_classes {
        return Err(Error::InvalidInput(format!(
            "dataset has {} classes, model only {}",
            dataset.num_classes, state.graph.num_classes
        )));
    }
    let mut hp = state.hyperparams.clone();
    hp.epochs = epochs;
    hp.seed = seed;
    hp.validate()?;
    let retrain = TransitionFunction::retrain(hp.epochs, hp.seed, &dataset.dataset_id, "manual");

    let mut meta = RunMeta {
        run_id: run_id.to_string(),
        created_at: chrono::Utc::now().to_rfc3339_opts(chrono::SecondsFormat::Secs, true),
        dataset_id: dataset.dataset_id.clone(),
        graph_fingerprint: state.graph.fingerprint(),
        source_state: Some(state.state_id.clone()),
        final_state: None,
        diverged: false,
    };
    let mut run = RunLog::create(run_dir, &meta)?;

    let mut current = state.clone();
    let mut step = state.meta.step;
    let mut rng = ChaCha8Rng::seed_from_u64(hp.seed);
    let mut order: Vec<usize> = (0..dataset.train.len()).collect();
    let mut epoch_losses = Vec::new();
    let mut diverged = false;

    'epochs: for epoch in 0..hp.epochs {
        order.shuffle(&mut rng);
        let mut next = current.clone();
        let mut loss_sum = 0.0;
        let mut correct = 0usize;
        for batch in order.chunks(hp.batch_size) {
            let mut acc: Option<std::collections::BTreeMap<String, NodeParams>> = None;
            for &i in batch {
                let sample = &dataset.train[i];
                let pass = engine::forward(&next, &sample.input)?;
                let logits = &pass.logits().data;
                let loss = cross_entropy(logits, sample.label);
                if !loss.is_finite() {
                    diverged = true;
                    break 'epochs;
                }
                loss_sum += loss;
                if pass.logits().argmax() == sample.label {
                    correct += 1;
                }
                // d(loss)/d(logits) = softmax(logits) - onehot(label)
                let mut dlogits = engine::softmax(pass.logits()).data;
                dlogits[sample.label] -= 1.0;
                let grads = backward_from(&next, &pass, &dlogits);
                match acc.as_mut() {
                    None => acc = Some(grads.params),
                    Some(a) => {
                        for (name, g) in grads.params {
                            let t = a.get_mut(&name).expect("same graph");
                            for (x, y) in t.weights.data.iter_mut().zip(&g.weights.data) {
                                *x += y;
                            }
                            for (x, y) in t.bias.data.iter_mut().zip(&g.bias.data) {
                                *x += y;
                            }
                        }
                    }
                }
            }
            let scale = hp.learning_rate / batch.len() as f64;
            for (name, g) in acc.expect("nonempty batch") {
                let p = next.parameters.get_mut(&name).expect("same graph");
                for (w, d) in p.weights.data.iter_mut().zip(&g.weights.data) {
                    *w -= scale * d;
                }
                for (b, d) in p.bias.data.iter_mut().zip(&g.bias.data) {
                    *b -= scale * d;
                }
            }
            step += 1;
        }
        if !all_finite(&next) {
            diverged = true;
            break;
        }
        current = next;
        current.meta.step = step;
        let n = dataset.train.len() as f64;
        let epoch_loss = loss_sum / n;
        epoch_losses.push(epoch_loss);
        run.log_step(&current, step)?;
        run.log_scalar(step, LOSS_SERIES, epoch_loss)?;
        run.log_scalar(step, ACCURACY_SERIES, correct as f64 / n)?;
        run.save_checkpoint(&current, step)?;
        on_epoch(epoch + 1);
    }

    let final_state = state.derive(&retrain.transition_id, |s| {
        s.parameters = current.parameters;
        s.hyperparams = hp;
        s.meta.step = current.meta.step;
        s.meta.run_id = Some(run_id.to_string());
        s.meta.dataset_id = Some(dataset.dataset_id.clone());
    });
    meta.final_state = Some(final_state.state_id.clone());
    meta.diverged = diverged;
    run.write_meta(&meta)?;
    Ok(TrainOutcome {
        state: final_state,
        run,
        epoch_losses,
        diverged,
    })
}

/// The retrain transition that [`train`] records in the new state's lineage.
pub fn retrain_transition(state: &ModelState, dataset_id: &str) -> TransitionFunction {
    TransitionFunction::retrain(state.hyperparams.epochs, state.hyperparams.seed, dataset_id, "manual")
}
