//! Learning-rate schedule: linear warmup into a cosine decay that bottoms
//! out at `min_ratio * base_lr`.

/// Learning rate at `step` of `total` steps.
pub fn cosine_lr(step: usize, total: usize, base_lr: f64, warmup: usize, min_ratio: f64) -> f64 {
    if total == 0 {
        return base_lr;
    }
    if step < warmup {
        return base_lr * step as f64 / warmup as f64;
    }
    let span = (total - warmup).max(1) as f64;
    let progress = ((step - warmup) as f64 / span).clamp(0.0, 1.0);
    let cosine = 0.5 * (1.0 + (std::f64::consts::PI * progress).cos());
    base_lr * (min_ratio + (1.0 - min_ratio) * cosine)
}

#[cfg(test)]
mod tests {
    use super::cosine_lr;

    #[test]
    fn endpoints_and_midpoint() {
        let base = 2e-3;
        assert_eq!(cosine_lr(0, 1000, base, 0, 0.01), base);
        let end = cosine_lr(1000, 1000, base, 0, 0.01);
        assert!((end - 0.01 * base).abs() < 1e-18);
        let mid = cosine_lr(500, 1000, base, 0, 0.01);
        assert!((mid - base * (0.01 + 0.99 * 0.5)).abs() < 1e-12);
    }

    #[test]
    fn warmup_ramps_linearly() {
        let base = 1.0;
        assert_eq!(cosine_lr(0, 100, base, 10, 0.01), 0.0);
        assert!((cosine_lr(5, 100, base, 10, 0.01) - 0.5).abs() < 1e-15);
        assert_eq!(cosine_lr(10, 100, base, 10, 0.01), base);
    }
}
