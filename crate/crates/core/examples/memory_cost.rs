// Storage cost of each strategy at full scale (32x32 channels): raw-sample
// buffers against two stored generator snapshots.

use csilab::channelgen::Samples;
use csilab::ctgan::{snapshot_generator, GeneratorSpec, GENERATOR_BUDGET, Z_DIM};
use csilab::expcli::format_mib;
use csilab::memory::{memory_bytes, MemoryUnit, RawSampleMemory, StrategyKind};
use csilab::netcore::{RandomState, Stream};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let (n_t, n_c) = (32, 32);
    let filled = |n: usize| Samples::new(n_t, n_c, vec![0.5; n * 2 * n_t * n_c]);

    let gen_spec = GeneratorSpec::for_budget(Z_DIM, n_t, n_c, GENERATOR_BUDGET)?;
    let params = gen_spec
        .network()?
        .init_params(&mut RandomState::new(0).stream(Stream::Init));
    let mut unit = MemoryUnit::new(n_t, n_c);
    for id in ["A", "B"] {
        unit.push(snapshot_generator(&gen_spec, &params, id)?)?;
    }

    let mut joint = RawSampleMemory::new(n_t, n_c, None);
    joint.append(&filled(5000)?, "A")?;
    joint.append(&filled(5000)?, "B")?;
    let mut reservoir = RawSampleMemory::new(n_t, n_c, Some(2000));
    let mut rng = RandomState::new(1).stream(Stream::Shuffle);
    reservoir.reservoir_update(&filled(5000)?, "A", &mut rng)?;
    let empty = RawSampleMemory::new(n_t, n_c, None);
    let none = MemoryUnit::new(n_t, n_c);

    let rows = [
        (StrategyKind::proposed(10_000), &unit, &empty),
        (StrategyKind::Joint, &none, &joint),
        (
            StrategyKind::Reservoir { capacity: 2000 },
            &none,
            &reservoir,
        ),
        (StrategyKind::MinMax { capacity: 2000 }, &none, &reservoir),
        (StrategyKind::DirectTransfer, &none, &empty),
    ];
    println!(
        "generator: width {}, {} parameters",
        gen_spec.base_ch,
        gen_spec.count_params()
    );
    for (kind, unit, raw) in rows {
        let b = memory_bytes(&kind, unit, raw, 4);
        println!(
            "{:<10} {:>12} bytes  {}",
            kind.label(),
            b.bytes,
            format_mib(b.bytes)
        );
    }
    Ok(())
}
