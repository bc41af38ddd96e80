// Fits the consistency-regularized WGAN to one scenario, freezes the
// generator into a snapshot, saves it and samples from the reloaded copy.

use csilab::channelgen::{generate_dataset, ScenarioSpec};
use csilab::ctgan::{
    load_snapshot, sample_latent, save_snapshot, snapshot_generator, train_gan, DiscriminatorSpec,
    GanTrainConfig, GeneratorSpec, Z_DIM,
};
use csilab::netcore::{RandomState, Stream};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let spec = ScenarioSpec::sector("B", 35.0, 60.0, 1).with_dims(16, 16);
    let ds = generate_dataset(&spec, 100, 10)?;
    let gen_spec = GeneratorSpec::new(Z_DIM, 16, 16, 8);
    let disc_spec = DiscriminatorSpec::new(16, 16, [8, 16, 32]);
    let cfg = GanTrainConfig {
        epochs: 3,
        batch_size: 25,
        seed: 3,
        ..GanTrainConfig::default()
    };
    let trained = train_gan(&ds.train, &gen_spec, &disc_spec, &cfg)?;
    for row in &trained.curve {
        println!(
            "iter {:>3}: D {:+.4} G {:+.4} GP {:.4} CT {:.4}",
            row.iteration, row.d_loss, row.g_loss, row.gp_term, row.ct_term
        );
    }

    let snap = snapshot_generator(&gen_spec, &trained.gen_params, &spec.id)?;
    let path = std::env::temp_dir().join("csilab-example-generator.csip");
    save_snapshot(&snap, &path, Some(&cfg), cfg.seed)?;
    let (back, meta) = load_snapshot(&path)?;
    assert_eq!(back, snap);
    println!(
        "snapshot {}: {} parameters, {} bytes",
        meta.scenario_id,
        gen_spec.count_params(),
        meta.byte_size
    );

    let z = sample_latent(4, Z_DIM, &mut RandomState::new(9).stream(Stream::Latent));
    let fake = back.generate(&z)?;
    let peak = fake.data().iter().fold(0.0f32, |m, v| m.max(v.abs()));
    println!("generated {:?}, max |entry| {peak:.3}", fake.shape());
    Ok(())
}
