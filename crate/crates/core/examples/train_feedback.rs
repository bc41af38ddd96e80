// Trains the CSI feedback autoencoder on one scenario and reports NMSE on
// its held-out split.

use csilab::channelgen::{generate_dataset, ScenarioSpec};
use csilab::feedbacknet::{build_feedback_model, nmse_eval, train_feedback, Arch, TrainConfig};
use csilab::netcore::{RandomState, Stream};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let spec = ScenarioSpec::sector("A", 0.0, 25.0, 0).with_dims(16, 16);
    let ds = generate_dataset(&spec, 200, 50)?;
    let gamma = 1.0 / 16.0;
    let mut model = build_feedback_model(
        gamma,
        spec.n_t,
        spec.n_c,
        Arch::CsinetLike,
        &mut RandomState::new(1).stream(Stream::Init),
    )?;
    println!(
        "gamma {gamma}: codeword length {}, {} parameters",
        model.v,
        model.count_params()
    );
    println!("before training: {:.2} dB", nmse_eval(&model, &ds.test)?);
    let cfg = TrainConfig {
        epochs: 10,
        batch_size: 25,
        seed: 2,
        ..TrainConfig::default()
    };
    let history = train_feedback(&mut model, &[&ds.train], &cfg)?;
    for (e, l) in history.epoch_loss.iter().enumerate().step_by(3) {
        println!("epoch {e:>2}: training MSE {l:.5}");
    }
    println!(
        "after {} epochs: {:.2} dB",
        cfg.epochs,
        nmse_eval(&model, &ds.test)?
    );
    Ok(())
}
