//! Scratch probe: per-item singleton-weight sweep with paired seam stats.

use fgim_core::config::parse_config;
use fgim_core::evalsuite::eval_accuracy;
use fgim_core::fgim::{transfer, FgimConfig};
use fgim_core::pipeline::{build_eval_models, flip_targets, load_models};

fn l2(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

fn main() {
    let path = std::env::args().nth(1).expect("usage: seamprobe CONFIG");
    let cfg = parse_config(&path).expect("config");
    let models = load_models::<f64>(&cfg).expect("models");
    let eval = build_eval_models::<f64>(&cfg, &models.splits.train).expect("eval models");
    let test = models.splits.test.as_ref().expect("test split");
    let n = test.len();
    eprintln!("test items: {n}");

    let mut hits: Vec<Vec<bool>> = Vec::new();
    let mut norms: Vec<f64> = Vec::new();
    let mut succ: Vec<f64> = Vec::new();
    for w in 1..=6 {
        let config = FgimConfig { weights: vec![w as f64], ..cfg.fgim.clone() };
        let mut outputs = Vec::with_capacity(n);
        let mut targets = Vec::with_capacity(n);
        let mut norm_sum = 0.0;
        let mut s = 0usize;
        for item in &test.items {
            let target = flip_targets(&item.attrs);
            let r = transfer(&item.tokens, &target, &models.ae, &models.clf, &config, &models.vocab)
                .expect("transfer");
            norm_sum += l2(&r.z_edited, &r.z_source);
            s += usize::from(r.success);
            outputs.push(r.decoded_tokens);
            targets.push(target);
        }
        // Per-item hit: all aspects on the target side of 0.5.
        let preds = eval.clf.predict(&outputs).expect("predict");
        let hit: Vec<bool> = preds
            .iter()
            .zip(&targets)
            .map(|(p, t)| {
                p.iter().zip(t.iter()).all(|(&pi, &ti)| (pi >= 0.5) == (ti >= 0.5))
            })
            .collect();
        let acc = eval_accuracy(&outputs, &targets, &eval.clf).expect("acc");
        let rate = hit.iter().filter(|&&h| h).count() as f64 / n as f64;
        assert!((acc - rate).abs() < 1e-12, "hit rule and eval_accuracy diverge: {acc} vs {rate}");
        norms.push(norm_sum / n as f64);
        succ.push(s as f64 / n as f64);
        hits.push(hit);
        eprintln!("w={w} acc={rate:.4} norm={:.4} succ={:.3}", norms[w - 1], succ[w - 1]);
    }

    println!("\nseams (paired):");
    for i in 0..5 {
        let (a, b) = (&hits[i], &hits[i + 1]);
        let n01 = a.iter().zip(b).filter(|(&x, &y)| !x && y).count(); // up
        let n10 = a.iter().zip(b).filter(|(&x, &y)| x && !y).count(); // down
        let diff = (n01 as f64 - n10 as f64) / n as f64;
        let d = (n01 + n10) as f64;
        let se_pair = if d == 0.0 {
            0.0
        } else {
            (d - (n01 as f64 - n10 as f64).powi(2) / n as f64).sqrt() / n as f64
        };
        let p1 = hits[i].iter().filter(|&&h| h).count() as f64 / n as f64;
        let p2 = hits[i + 1].iter().filter(|&&h| h).count() as f64 / n as f64;
        let se_ind = ((p1 * (1.0 - p1) + p2 * (1.0 - p2)) / n as f64).sqrt();
        let pass_pair = diff >= -se_pair;
        let pass_ind = p2 >= p1 - se_ind;
        println!(
            "w{}->w{}: up={n01} down={n10} diff={diff:+.4} se_pair={se_pair:.4} ({}) se_ind={se_ind:.4} ({})",
            i + 1,
            i + 2,
            if pass_pair { "PASS" } else { "FAIL" },
            if pass_ind { "PASS" } else { "FAIL" },
        );
    }
    println!("\nnorms: {norms:?}");
    let mono = norms.windows(2).all(|p| p[1] >= p[0]);
    println!("norm nondecreasing: {mono}");
}
