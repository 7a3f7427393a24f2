//! Overlap and boundary-distance metrics on label maps.

/// `2|P ∩ G| / (|P| + |G|)`; two empty masks score 1.
pub fn dice_score(pred: &[bool], gt: &[bool]) -> f64 {
    assert_eq!(pred.len(), gt.len());
    let (mut inter, mut p, mut g) = (0usize, 0usize, 0usize);
    for (&a, &b) in pred.iter().zip(gt) {
        inter += (a && b) as usize;
        p += a as usize;
        g += b as usize;
    }
    if p + g == 0 {
        1.0
    } else {
        2.0 * inter as f64 / (p + g) as f64
    }
}

/// Foreground pixels with at least one background pixel among their eight
/// neighbors; pixels outside the image count as background.
pub fn boundary(mask: &[bool], height: usize, width: usize) -> Vec<(usize, usize)> {
    assert_eq!(mask.len(), height * width);
    let at = |r: isize, c: isize| {
        r >= 0 && c >= 0 && (r as usize) < height && (c as usize) < width && mask[r as usize * width + c as usize]
    };
    let mut out = Vec::new();
    for r in 0..height {
        for c in 0..width {
            if !mask[r * width + c] {
                continue;
            }
            let (ri, ci) = (r as isize, c as isize);
            let edge = (-1..=1).any(|dr| (-1..=1).any(|dc| !at(ri + dr, ci + dc)));
            if edge {
                out.push((r, c));
            }
        }
    }
    out
}

/// Nearest-rank 95th percentile over `a` of the distance to the closest
/// point of `b`.
fn directed_p95(a: &[(usize, usize)], b: &[(usize, usize)]) -> f64 {
    let mut d: Vec<u64> = a
        .iter()
        .map(|&(r, c)| {
            b.iter()
                .map(|&(r2, c2)| {
                    let (dr, dc) = (r.abs_diff(r2) as u64, c.abs_diff(c2) as u64);
                    dr * dr + dc * dc
                })
                .min()
                .unwrap()
        })
        .collect();
    d.sort_unstable();
    let rank = (95 * d.len()).div_ceil(100);
    (d[rank - 1] as f64).sqrt()
}

/// Symmetric 95th-percentile boundary distance in pixels. Two empty masks
/// give 0; exactly one empty mask gives the image diagonal.
pub fn hd95(pred: &[bool], gt: &[bool], height: usize, width: usize) -> f64 {
    let (bp, bg) = (boundary(pred, height, width), boundary(gt, height, width));
    match (bp.is_empty(), bg.is_empty()) {
        (true, true) => 0.0,
        (true, false) | (false, true) => ((height * height + width * width) as f64).sqrt(),
        _ => directed_p95(&bp, &bg).max(directed_p95(&bg, &bp)),
    }
}

pub fn class_mask(labels: &[u8], class: u8) -> Vec<bool> {
    labels.iter().map(|&l| l == class).collect()
}

/// Per-image scores averaged over the foreground classes `1..N`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ImageScores {
    pub dice: f64,
    pub hd95: f64,
}

pub fn image_scores(pred: &[u8], gt: &[u8], classes: usize, height: usize, width: usize) -> ImageScores {
    let fg = (classes - 1) as f64;
    let (mut dice, mut hd) = (0.0, 0.0);
    for c in 1..classes as u8 {
        let (p, g) = (class_mask(pred, c), class_mask(gt, c));
        dice += dice_score(&p, &g);
        hd += hd95(&p, &g, height, width);
    }
    ImageScores {
        dice: dice / fg,
        hd95: hd / fg,
    }
}
