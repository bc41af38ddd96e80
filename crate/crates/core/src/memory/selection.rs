use rand::Rng;

use crate::channelgen::Samples;

/// What a reservoir does with the `seen`-th stream item (1-based count).
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ReservoirSlot {
    Push,
    Replace(usize),
    Skip,
}

/// Classic single-pass reservoir decision: fill the first `capacity` slots,
/// then keep item `seen` with probability `capacity / seen` in a uniform slot.
pub fn reservoir_slot<R: Rng + ?Sized>(
    len: usize,
    capacity: usize,
    seen: usize,
    rng: &mut R,
) -> ReservoirSlot {
    if len < capacity {
        return ReservoirSlot::Push;
    }
    if capacity == 0 {
        return ReservoirSlot::Skip;
    }
    let j = rng.random_range(0..seen);
    if j < capacity {
        ReservoirSlot::Replace(j)
    } else {
        ReservoirSlot::Skip
    }
}

/// Feeds `stream` into `store`. `seen` counts every item offered so far and
/// must persist between calls for the stream to stay uniform.
pub fn reservoir_update<T, R: Rng + ?Sized>(
    store: &mut Vec<T>,
    seen: &mut usize,
    capacity: usize,
    stream: impl IntoIterator<Item = T>,
    rng: &mut R,
) {
    for item in stream {
        *seen += 1;
        match reservoir_slot(store.len(), capacity, *seen, rng) {
            ReservoirSlot::Push => store.push(item),
            ReservoirSlot::Replace(j) => store[j] = item,
            ReservoirSlot::Skip => {}
        }
    }
}

fn sq_dist(a: &[f32], b: &[f32]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| {
            let d = (*x - *y) as f64;
            d * d
        })
        .sum()
}

/// Smallest pairwise Euclidean distance among the chosen samples.
pub fn min_pairwise_distance(pool: &Samples, chosen: &[usize]) -> f64 {
    let mut best = f64::INFINITY;
    for (a, &i) in chosen.iter().enumerate() {
        for &j in &chosen[a + 1..] {
            best = best.min(sq_dist(pool.get(i), pool.get(j)));
        }
    }
    best.sqrt()
}

/// Pools up to this size get a single-swap local search after the greedy pass.
pub const LOCAL_SEARCH_MAX_POOL: usize = 32;

/// Max-min (farthest-point) subset of `capacity` samples under L2 distance.
///
/// The first point is drawn from `rng`; each further point maximizes its
/// distance to the points already chosen (lowest index on ties). Small pools
/// are then polished by swapping while a swap raises the minimum pairwise
/// distance. Returns pool indices in ascending order; `capacity >= len`
/// returns the whole pool.
pub fn minmax_select<R: Rng + ?Sized>(pool: &Samples, capacity: usize, rng: &mut R) -> Vec<usize> {
    let n = pool.len();
    if capacity >= n {
        return (0..n).collect();
    }
    if capacity == 0 {
        return Vec::new();
    }
    let mut chosen = Vec::with_capacity(capacity);
    let mut taken = vec![false; n];
    let mut nearest = vec![f64::INFINITY; n];
    let mut next = rng.random_range(0..n);
    loop {
        chosen.push(next);
        taken[next] = true;
        if chosen.len() == capacity {
            break;
        }
        let p = pool.get(next);
        let mut far = (f64::NEG_INFINITY, usize::MAX);
        for i in 0..n {
            if taken[i] {
                continue;
            }
            nearest[i] = nearest[i].min(sq_dist(p, pool.get(i)));
            if nearest[i] > far.0 {
                far = (nearest[i], i);
            }
        }
        next = far.1;
    }
    if n <= LOCAL_SEARCH_MAX_POOL {
        local_search(pool, &mut chosen);
    }
    chosen.sort_unstable();
    chosen
}

fn local_search(pool: &Samples, chosen: &mut [usize]) {
    let n = pool.len();
    let mut current = min_pairwise_distance(pool, chosen);
    'improve: loop {
        for slot in 0..chosen.len() {
            for cand in 0..n {
                if chosen.contains(&cand) {
                    continue;
                }
                let old = chosen[slot];
                chosen[slot] = cand;
                let d = min_pairwise_distance(pool, chosen);
                if d > current {
                    current = d;
                    continue 'improve;
                }
                chosen[slot] = old;
            }
        }
        break;
    }
}
