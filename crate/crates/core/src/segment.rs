//! Graph-based over-segmentation (Felzenszwalb & Huttenlocher) on a
//! 4-connected pixel grid. It seeds the hierarchical grouping that produces
//! window proposals.

use crate::raster::{GrayImage, LabelImage};

/// Separable Gaussian blur with replicated borders, returned as floats.
pub fn gaussian_blur(img: &GrayImage, sigma: f32) -> Vec<f32> {
    let (w, h) = (img.width() as usize, img.height() as usize);
    let src: Vec<f32> = img.data().iter().map(|&v| v as f32).collect();
    if sigma <= 0.0 {
        return src;
    }
    let radius = (4.0 * sigma).ceil() as isize;
    let mut kernel: Vec<f32> = (-radius..=radius)
        .map(|i| (-(i * i) as f32 / (2.0 * sigma * sigma)).exp())
        .collect();
    let total: f32 = kernel.iter().sum();
    kernel.iter_mut().for_each(|k| *k /= total);

    let clamp = |i: isize, n: usize| i.clamp(0, n as isize - 1) as usize;
    let mut tmp = vec![0.0f32; w * h];
    for y in 0..h {
        for x in 0..w {
            tmp[y * w + x] = kernel
                .iter()
                .enumerate()
                .map(|(k, kv)| kv * src[y * w + clamp(x as isize + k as isize - radius, w)])
                .sum();
        }
    }
    let mut out = vec![0.0f32; w * h];
    for y in 0..h {
        for x in 0..w {
            out[y * w + x] = kernel
                .iter()
                .enumerate()
                .map(|(k, kv)| kv * tmp[clamp(y as isize + k as isize - radius, h) * w + x])
                .sum();
        }
    }
    out
}

struct Forest {
    parent: Vec<u32>,
    size: Vec<u32>,
    internal: Vec<f32>,
}

impl Forest {
    fn new(n: usize) -> Self {
        Forest {
            parent: (0..n as u32).collect(),
            size: vec![1; n],
            internal: vec![0.0; n],
        }
    }

    fn find(&mut self, mut i: u32) -> u32 {
        while self.parent[i as usize] != i {
            let p = self.parent[i as usize];
            self.parent[i as usize] = self.parent[p as usize];
            i = p;
        }
        i
    }

    fn union(&mut self, a: u32, b: u32, weight: f32) {
        let (big, small) = if self.size[a as usize] >= self.size[b as usize] {
            (a, b)
        } else {
            (b, a)
        };
        self.parent[small as usize] = big;
        self.size[big as usize] += self.size[small as usize];
        self.internal[big as usize] = weight;
    }
}

/// Segments a (blurred) intensity plane.
///
/// `k` scales the merge threshold `k / |C|`; larger values give larger
/// regions. Regions smaller than `min_region` pixels are then absorbed along
/// their weakest boundary edge. Every output region is 4-connected and labels
/// are dense in raster order.
pub fn felzenszwalb(plane: &[f32], width: u32, height: u32, k: f32, min_region: u32) -> LabelImage {
    let (w, h) = (width as usize, height as usize);
    assert_eq!(plane.len(), w * h, "plane does not match dimensions");
    let mut edges: Vec<(f32, u32, u32)> = Vec::with_capacity(2 * w * h);
    for y in 0..h {
        for x in 0..w {
            let i = y * w + x;
            if x + 1 < w {
                edges.push(((plane[i] - plane[i + 1]).abs(), i as u32, i as u32 + 1));
            }
            if y + 1 < h {
                edges.push(((plane[i] - plane[i + w]).abs(), i as u32, (i + w) as u32));
            }
        }
    }
    // Stable ordering on ties keeps the result deterministic.
    edges.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));

    let mut forest = Forest::new(w * h);
    for &(weight, a, b) in &edges {
        let (ra, rb) = (forest.find(a), forest.find(b));
        if ra == rb {
            continue;
        }
        let ta = forest.internal[ra as usize] + k / forest.size[ra as usize] as f32;
        let tb = forest.internal[rb as usize] + k / forest.size[rb as usize] as f32;
        if weight <= ta.min(tb) {
            forest.union(ra, rb, weight);
        }
    }
    for &(weight, a, b) in &edges {
        let (ra, rb) = (forest.find(a), forest.find(b));
        if ra != rb
            && (forest.size[ra as usize] < min_region || forest.size[rb as usize] < min_region)
        {
            forest.union(ra, rb, weight);
        }
    }

    let mut remap = vec![u32::MAX; w * h];
    let mut labels = vec![0u32; w * h];
    let mut next = 0u32;
    for (i, label) in labels.iter_mut().enumerate() {
        let root = forest.find(i as u32) as usize;
        if remap[root] == u32::MAX {
            remap[root] = next;
            next += 1;
        }
        *label = remap[root];
    }
    LabelImage::from_parts(width, height, labels, next)
}

/// Blurs the page with `sigma` and over-segments it.
pub fn segment(page: &GrayImage, k: f32, min_region: u32, sigma: f32) -> LabelImage {
    let blurred = gaussian_blur(page, sigma);
    felzenszwalb(&blurred, page.width(), page.height(), k, min_region)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn four_connected(labels: &LabelImage) -> bool {
        let (w, h) = (labels.width() as usize, labels.height() as usize);
        let l = labels.labels();
        let mut seen = vec![false; w * h];
        let mut found = vec![false; labels.label_count() as usize];
        for start in 0..w * h {
            if seen[start] {
                continue;
            }
            let id = l[start];
            if found[id as usize] {
                return false; // second disjoint piece of the same label
            }
            found[id as usize] = true;
            let mut stack = vec![start];
            seen[start] = true;
            while let Some(i) = stack.pop() {
                let (x, y) = (i % w, i / w);
                let mut n = Vec::with_capacity(4);
                if x > 0 {
                    n.push(i - 1);
                }
                if x + 1 < w {
                    n.push(i + 1);
                }
                if y > 0 {
                    n.push(i - w);
                }
                if y + 1 < h {
                    n.push(i + w);
                }
                for j in n {
                    if !seen[j] && l[j] == id {
                        seen[j] = true;
                        stack.push(j);
                    }
                }
            }
        }
        true
    }

    #[test]
    fn constant_image_is_one_region() {
        let labels = segment(&GrayImage::filled(32, 24, 180), 300.0, 50, 0.8);
        assert_eq!(labels.label_count(), 1);
    }

    #[test]
    fn hard_vertical_edge_gives_two_regions() {
        // Blurred transition columns are shorter than min_region, so they
        // are absorbed by the flat halves.
        let mut img = GrayImage::filled(64, 40, 240);
        for y in 0..40 {
            for x in 32..64 {
                img.set(x, y, 20);
            }
        }
        let labels = segment(&img, 300.0, 50, 0.8);
        assert_eq!(labels.label_count(), 2);
        assert_ne!(labels.get(0, 0), labels.get(63, 39));
        assert_eq!(labels.get(31, 0), labels.get(0, 0));
        assert_eq!(labels.get(32, 0), labels.get(63, 0));
        assert!(four_connected(&labels));
    }

    #[test]
    fn regions_are_four_connected_on_texture() {
        let mut img = GrayImage::filled(48, 40, 255);
        for y in 0..40u32 {
            for x in 0..48u32 {
                let v = ((x * 7 + y * 13) % 11) as u8 * 20 + if (x / 6 + y / 5) % 2 == 0 { 0 } else { 30 };
                img.set(x, y, v);
            }
        }
        for (k, min) in [(50.0, 10), (300.0, 50), (5.0, 1)] {
            let labels = segment(&img, k, min, 0.8);
            assert!(four_connected(&labels), "k={k} min={min}");
        }
    }

    #[test]
    fn small_regions_are_absorbed() {
        let mut img = GrayImage::filled(40, 40, 255);
        img.set(20, 20, 0);
        let labels = segment(&img, 300.0, 50, 0.0);
        assert_eq!(labels.label_count(), 1);
    }

    #[test]
    fn blur_preserves_constant() {
        let out = gaussian_blur(&GrayImage::filled(9, 7, 100), 0.8);
        assert!(out.iter().all(|&v| (v - 100.0).abs() < 1e-3));
    }
}
