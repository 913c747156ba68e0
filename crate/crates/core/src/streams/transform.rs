//! Geometric transforms: the 16-way pretext space (rotation × scale ×
//! aspect) and the arbitrary-angle rotation used by MNIST-360.

use super::Image;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Rotation {
    R0,
    R90,
    R180,
    R270,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Scale {
    /// 0.67
    Shrink,
    /// 1.0
    Keep,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Aspect {
    /// Width × 0.67.
    Narrow,
    /// Width × 1.33.
    Wide,
    /// No aspect change. Not part of the proxy-label space.
    Keep,
}

impl Rotation {
    pub const ALL: [Rotation; 4] = [Rotation::R0, Rotation::R90, Rotation::R180, Rotation::R270];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn degrees(self) -> f64 {
        90.0 * self.index() as f64
    }
}

impl Scale {
    pub fn factor(self) -> f64 {
        match self {
            Scale::Shrink => 0.67,
            Scale::Keep => 1.0,
        }
    }
}

impl Aspect {
    pub fn factor(self) -> f64 {
        match self {
            Aspect::Narrow => 0.67,
            Aspect::Wide => 1.33,
            Aspect::Keep => 1.0,
        }
    }
}

/// One geometric transform. `proxy_label = rot·4 + scale·2 + aspect` over
/// rotation {0,90,180,270}, scale {0.67, 1.0}, aspect {0.67, 1.33}.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct TransformSpec {
    pub rotation: Rotation,
    pub scale: Scale,
    pub aspect: Aspect,
}

impl TransformSpec {
    pub const NUM_PROXY_LABELS: usize = 16;

    pub const IDENTITY: TransformSpec = TransformSpec {
        rotation: Rotation::R0,
        scale: Scale::Keep,
        aspect: Aspect::Keep,
    };

    /// `None` for specs outside the proxy space (aspect `Keep`).
    pub fn proxy_label(&self) -> Option<usize> {
        let aspect = match self.aspect {
            Aspect::Narrow => 0,
            Aspect::Wide => 1,
            Aspect::Keep => return None,
        };
        let scale = match self.scale {
            Scale::Shrink => 0,
            Scale::Keep => 1,
        };
        Some(self.rotation.index() * 4 + scale * 2 + aspect)
    }

    pub fn from_proxy_label(label: usize) -> Option<TransformSpec> {
        if label >= Self::NUM_PROXY_LABELS {
            return None;
        }
        Some(TransformSpec {
            rotation: Rotation::ALL[label / 4],
            scale: if (label / 2) % 2 == 0 { Scale::Shrink } else { Scale::Keep },
            aspect: if label % 2 == 0 { Aspect::Narrow } else { Aspect::Wide },
        })
    }

    /// The 16 proxy-space specs in label order.
    pub fn all() -> impl Iterator<Item = TransformSpec> {
        (0..Self::NUM_PROXY_LABELS).map(|l| Self::from_proxy_label(l).expect("in range"))
    }
}

/// Nearest-neighbour rescale by (`fy`, `fx`), then zero-pad or center-crop
/// back to the original size.
fn rescale(image: &Image, fy: f64, fx: f64) -> Image {
    let (h, w) = (image.height, image.width);
    let new_h = ((h as f64 * fy).round() as usize).max(1);
    let new_w = ((w as f64 * fx).round() as usize).max(1);
    // offset of the scaled grid inside the output grid (negative = crop)
    let off_r = (h as isize - new_h as isize).div_euclid(2);
    let off_c = (w as isize - new_w as isize).div_euclid(2);
    let mut out = Image::blank(h, w);
    for r in 0..h {
        let sr = r as isize - off_r;
        if sr < 0 || sr >= new_h as isize {
            continue;
        }
        let src_r = (((sr as f64 + 0.5) * h as f64 / new_h as f64) as usize).min(h - 1);
        for c in 0..w {
            let sc = c as isize - off_c;
            if sc < 0 || sc >= new_w as isize {
                continue;
            }
            let src_c = (((sc as f64 + 0.5) * w as f64 / new_w as f64) as usize).min(w - 1);
            out.pixels[r * w + c] = image.get(src_r, src_c);
        }
    }
    out
}

/// Counter-clockwise quarter turns as an exact index permutation.
fn rotate_quarter(image: &Image, turns: usize) -> Image {
    let n = image.height;
    assert_eq!(n, image.width, "quarter-turn rotation needs a square image");
    let mut cur = image.clone();
    for _ in 0..turns % 4 {
        let mut next = Image::blank(n, n);
        for r in 0..n {
            for c in 0..n {
                next.pixels[r * n + c] = cur.get(c, n - 1 - r);
            }
        }
        cur = next;
    }
    cur
}

pub fn apply_transform(image: &Image, spec: &TransformSpec) -> Image {
    let fy = spec.scale.factor();
    let fx = spec.scale.factor() * spec.aspect.factor();
    let resized = if fy == 1.0 && fx == 1.0 {
        image.clone()
    } else {
        rescale(image, fy, fx)
    };
    rotate_quarter(&resized, spec.rotation.index())
}

/// Counter-clockwise rotation by an arbitrary angle (degrees) about the image
/// center with bilinear interpolation; pixels sampled from outside are 0.
pub fn rotate_image(image: &Image, degrees: f64) -> Image {
    let (h, w) = (image.height, image.width);
    let theta = degrees.to_radians();
    let (sin, cos) = theta.sin_cos();
    let cy = (h as f64 - 1.0) / 2.0;
    let cx = (w as f64 - 1.0) / 2.0;
    let mut out = Image::blank(h, w);
    let px = |r: isize, c: isize| -> f64 {
        if r < 0 || c < 0 || r >= h as isize || c >= w as isize {
            0.0
        } else {
            image.get(r as usize, c as usize)
        }
    };
    for r in 0..h {
        let dy = r as f64 - cy;
        for c in 0..w {
            let dx = c as f64 - cx;
            let sx = cx + cos * dx - sin * dy;
            let sy = cy + sin * dx + cos * dy;
            let x0 = sx.floor();
            let y0 = sy.floor();
            let ax = sx - x0;
            let ay = sy - y0;
            let (x0, y0) = (x0 as isize, y0 as isize);
            let v = (1.0 - ay) * ((1.0 - ax) * px(y0, x0) + ax * px(y0, x0 + 1))
                + ay * ((1.0 - ax) * px(y0 + 1, x0) + ax * px(y0 + 1, x0 + 1));
            out.pixels[r * w + c] = v.clamp(0.0, 1.0);
        }
    }
    out
}
