//! Reservoir sampling keeps every stream item with equal probability B/N,
//! however long the stream. This runs the buffer many times over a short
//! stream and prints how often each position of the stream was retained.
//!
//! cargo run --release --example reservoir -- [capacity] [stream_len] [trials]

use coca::checks::reservoir_chi_square;
use coca::memory::{BufferEntry, ReplayBuffer};
use coca::ndmath::Rng;
use coca::streams::Image;

fn main() {
    let args: Vec<usize> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let capacity = args.first().copied().unwrap_or(20);
    let stream = args.get(1).copied().unwrap_or(100);
    let trials = args.get(2).copied().unwrap_or(20_000);

    let mut rng = Rng::new(7);
    let mut kept = vec![0usize; stream];
    for _ in 0..trials {
        let mut buf = ReplayBuffer::new(capacity);
        for item in 0..stream {
            let entry = BufferEntry {
                image: Image::blank(1, 1),
                logits: Vec::new(),
                label: item,
            };
            buf.reservoir_insert(entry, &mut rng);
        }
        for e in buf.entries() {
            kept[e.label] += 1;
        }
    }
    let expected = capacity as f64 / stream as f64;
    println!("retention frequency by stream position (expected {expected:.3}):");
    for (block, counts) in kept.chunks(10).enumerate() {
        let f: Vec<String> = counts.iter().map(|&c| format!("{:.3}", c as f64 / trials as f64)).collect();
        println!("  {:>4}..: {}", block * 10, f.join(" "));
    }
    let (stat, p) = reservoir_chi_square(&kept, trials, capacity);
    println!("chi-square {stat:.1} on {} dof, p = {p:.3}", stream - 1);

    let mut buf = ReplayBuffer::new(capacity);
    for item in 0..stream {
        let entry = BufferEntry {
            image: Image::blank(1, 1),
            logits: Vec::new(),
            label: item,
        };
        buf.reservoir_insert(entry, &mut rng);
    }
    let draw: Vec<usize> = buf.sample_replay(8, &mut rng).expect("full buffer").iter().map(|e| e.label).collect();
    println!("one replay draw of 8 from the final buffer: {draw:?}");
}
