//! The 16 geometric pretext transforms (4 rotations x 2 scales x 2 aspect
//! ratios) applied to one MNIST digit, rendered as ASCII art. Falls back to
//! a synthetic glyph when MNIST is not available.
//!
//! cargo run --example pretext_transforms -- [index]

use std::path::PathBuf;

use coca::streams::{apply_transform, load_mnist, Image, MnistSplit, TransformSpec};

fn data_dir() -> PathBuf {
    std::env::var_os("COCA_DATA_DIR")
        .map(PathBuf::from)
        .unwrap_or_else(|| PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../data/mnist"))
}

fn glyph() -> Image {
    // a blocky "7"
    let mut img = Image::blank(28, 28);
    for c in 6..22 {
        img.pixels[5 * 28 + c] = 1.0;
        img.pixels[6 * 28 + c] = 1.0;
    }
    for r in 7..24 {
        let c = 21 - (r - 7) / 2;
        img.pixels[r * 28 + c] = 1.0;
        img.pixels[r * 28 + c - 1] = 1.0;
    }
    img
}

fn render(img: &Image) -> Vec<String> {
    (0..img.height)
        .step_by(2)
        .map(|r| {
            (0..img.width)
                .map(|c| {
                    let v = img.get(r, c).max(if r + 1 < img.height { img.get(r + 1, c) } else { 0.0 });
                    match v {
                        v if v > 0.6 => '#',
                        v if v > 0.2 => '+',
                        _ => '.',
                    }
                })
                .collect()
        })
        .collect()
}

fn main() {
    let index: usize = std::env::args().nth(1).and_then(|a| a.parse().ok()).unwrap_or(0);
    let image = match load_mnist(&data_dir(), MnistSplit::Test) {
        Ok(test) => test[index % test.len()].image.clone(),
        Err(e) => {
            eprintln!("({e}; using a synthetic digit)");
            glyph()
        }
    };
    let specs: Vec<TransformSpec> = TransformSpec::all().collect();
    for chunk in specs.chunks(4) {
        let panels: Vec<Vec<String>> = chunk.iter().map(|s| render(&apply_transform(&image, s))).collect();
        let titles: Vec<String> = chunk
            .iter()
            .map(|s| {
                format!(
                    "{:<28}",
                    format!(
                        "#{:<2} rot {:>3} sc {:.2} ar {:.2}",
                        s.proxy_label().unwrap_or(99),
                        s.rotation.degrees(),
                        s.scale.factor(),
                        s.aspect.factor()
                    )
                )
            })
            .collect();
        println!("{}", titles.join("  "));
        for line in 0..panels[0].len() {
            let row: Vec<&str> = panels.iter().map(|p| p[line].as_str()).collect();
            println!("{}", row.join("  "));
        }
        println!();
    }
}
