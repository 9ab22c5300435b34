//! Small RGB image type used for frames and crops, with bilinear sampling.
//!
//! Pixels are stored interleaved row-major (`r g b r g b ...`) as `f64` in
//! `[0,1]` before normalization.

#[derive(Debug, Clone, PartialEq)]
pub struct Image {
    pub width: usize,
    pub height: usize,
    pub data: Vec<f64>,
}

impl Image {
    pub fn new(width: usize, height: usize) -> Self {
        Image {
            width,
            height,
            data: vec![0.0; width * height * 3],
        }
    }

    pub fn filled(width: usize, height: usize, rgb: [f64; 3]) -> Self {
        let mut img = Image::new(width, height);
        for p in img.data.chunks_mut(3) {
            p.copy_from_slice(&rgb);
        }
        img
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> [f64; 3] {
        let i = (y * self.width + x) * 3;
        [self.data[i], self.data[i + 1], self.data[i + 2]]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, rgb: [f64; 3]) {
        let i = (y * self.width + x) * 3;
        self.data[i..i + 3].copy_from_slice(&rgb);
    }

    pub fn mean_rgb(&self) -> [f64; 3] {
        let mut acc = [0.0; 3];
        for p in self.data.chunks(3) {
            acc[0] += p[0];
            acc[1] += p[1];
            acc[2] += p[2];
        }
        let n = (self.width * self.height) as f64;
        [acc[0] / n, acc[1] / n, acc[2] / n]
    }

    /// Bilinear sample at continuous coordinates; `fill` outside the frame.
    pub fn sample_bilinear(&self, x: f64, y: f64, fill: [f64; 3]) -> [f64; 3] {
        if x < 0.0 || y < 0.0 || x > (self.width - 1) as f64 || y > (self.height - 1) as f64 {
            return fill;
        }
        let x0 = x.floor() as usize;
        let y0 = y.floor() as usize;
        let x1 = (x0 + 1).min(self.width - 1);
        let y1 = (y0 + 1).min(self.height - 1);
        let fx = x - x0 as f64;
        let fy = y - y0 as f64;
        let mut out = [0.0; 3];
        let (p00, p10, p01, p11) = (
            self.get(x0, y0),
            self.get(x1, y0),
            self.get(x0, y1),
            self.get(x1, y1),
        );
        for c in 0..3 {
            let top = p00[c] * (1.0 - fx) + p10[c] * fx;
            let bot = p01[c] * (1.0 - fx) + p11[c] * fx;
            out[c] = top * (1.0 - fy) + bot * fy;
        }
        out
    }

    pub fn from_u8_rgb(width: usize, height: usize, bytes: &[u8]) -> Self {
        assert_eq!(bytes.len(), width * height * 3);
        Image {
            width,
            height,
            data: bytes.iter().map(|&b| b as f64 / 255.0).collect(),
        }
    }

    pub fn to_u8_rgb(&self) -> Vec<u8> {
        self.data
            .iter()
            .map(|&v| (v.clamp(0.0, 1.0) * 255.0).round() as u8)
            .collect()
    }
}

/// Per-channel standardization constants, recorded in the checkpoint config.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct NormConstants {
    pub mean: [f64; 3],
    pub std: [f64; 3],
}

impl Default for NormConstants {
    fn default() -> Self {
        NormConstants {
            mean: [0.5, 0.5, 0.5],
            std: [0.25, 0.25, 0.25],
        }
    }
}

/// `[0,1]` image -> standardized planar-free interleaved floats.
pub fn normalize_image(img: &Image, c: &NormConstants) -> Image {
    let mut out = img.clone();
    for p in out.data.chunks_mut(3) {
        for ch in 0..3 {
            p[ch] = (p[ch] - c.mean[ch]) / c.std[ch];
        }
    }
    out
}
