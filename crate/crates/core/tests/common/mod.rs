#![allow(dead_code)]

use std::fs;
use std::path::Path;

use coca::ndmath::Rng;

/// Writes IDX files in the MNIST layout: 28x28 images where class `c` lights
/// a distinct 6x6 block, plus noise, so a small net can learn them.
pub fn write_synthetic_mnist(dir: &Path, train_per_class: usize, test_per_class: usize, seed: u64) {
    fs::create_dir_all(dir).unwrap();
    let mut rng = Rng::new(seed);
    for (prefix, per_class) in [("train", train_per_class), ("t10k", test_per_class)] {
        let n = per_class * 10;
        let mut images = Vec::with_capacity(16 + n * 784);
        images.extend_from_slice(&0x0000_0803u32.to_be_bytes());
        images.extend_from_slice(&(n as u32).to_be_bytes());
        images.extend_from_slice(&28u32.to_be_bytes());
        images.extend_from_slice(&28u32.to_be_bytes());
        let mut labels = Vec::with_capacity(8 + n);
        labels.extend_from_slice(&0x0000_0801u32.to_be_bytes());
        labels.extend_from_slice(&(n as u32).to_be_bytes());
        for i in 0..n {
            let class = i % 10;
            let (br, bc) = (4 + (class / 4) * 7, 3 + (class % 4) * 6);
            for r in 0..28 {
                for c in 0..28 {
                    let on = (br..br + 6).contains(&r) && (bc..bc + 6).contains(&c);
                    let v = if on { 200 + rng.below(56) } else { rng.below(30) };
                    images.push(v as u8);
                }
            }
            labels.push(class as u8);
        }
        fs::write(dir.join(format!("{prefix}-images-idx3-ubyte")), images).unwrap();
        fs::write(dir.join(format!("{prefix}-labels-idx1-ubyte")), labels).unwrap();
    }
}
