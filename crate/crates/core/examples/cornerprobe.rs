//! Scratch probe: per-corner transfer rates on a 2-aspect corpus.

use fgim_core::config::parse_config;
use fgim_core::fgim::transfer;
use fgim_core::pipeline::{build_eval_models, flip_targets, load_models};

fn main() {
    let path = std::env::args().nth(1).expect("usage: cornerprobe CONFIG");
    let cfg = parse_config(&path).expect("config");
    let models = load_models::<f64>(&cfg).expect("models");
    let eval = build_eval_models::<f64>(&cfg, &models.splits.train).expect("eval models");
    let test = models.splits.test.as_ref().expect("test split");
    eprintln!("test items: {}", test.len());

    // Group held-out items by source corner; each is pushed to its antipode.
    let corners = [[0.0, 0.0], [0.0, 1.0], [1.0, 0.0], [1.0, 1.0]];
    for src in corners {
        let items: Vec<_> = test.items.iter().filter(|it| it.attrs == src).collect();
        let target = flip_targets(&src);
        let mut outputs = Vec::with_capacity(items.len());
        let mut succ = 0usize;
        for item in &items {
            let r = transfer(&item.tokens, &target, &models.ae, &models.clf, &cfg.fgim, &models.vocab)
                .expect("transfer");
            succ += usize::from(r.success);
            outputs.push(r.decoded_tokens);
        }
        let preds = eval.clf.predict(&outputs).expect("predict");
        let hit = preds
            .iter()
            .filter(|p| p.iter().zip(&target).all(|(&pi, &ti)| (pi >= 0.5) == (ti >= 0.5)))
            .count();
        println!(
            "target ({},{}) from ({},{}): n={} rate={:.3} succ={:.3}",
            target[0],
            target[1],
            src[0],
            src[1],
            items.len(),
            hit as f64 / items.len() as f64,
            succ as f64 / items.len() as f64,
        );
    }
}
