//! Temporary tuning probes; deleted before release.

use mehfest::attack::{fakebob, AttackParams};
use mehfest::eval::corpus::{Label, SynthCorpusConfig};
use mehfest::sv::{
    eer_threshold, extract_features, score, train_gmm, FeatureMatrix, FeatureParams, SvModel,
};

fn build(seed: u64) -> (SvModel, Vec<(mehfest::AudioClip, f64)>, f64) {
    let mut corpus = SynthCorpusConfig::overlapping_voices(14, 26, seed);
    corpus.duration_s = 1.0;
    let clips = corpus.manifest().materialize().unwrap();
    let fp = FeatureParams::default();
    let mut speaker_rows = Vec::new();
    let mut all_rows = Vec::new();
    for (clip, label) in &clips {
        let f = extract_features(clip, &fp).unwrap();
        if *label == Label::Legit {
            speaker_rows.extend(f.rows.iter().cloned());
        }
        all_rows.extend(f.rows);
    }
    let speaker = train_gmm(&FeatureMatrix { rows: speaker_rows }, 6, 20, 1).unwrap();
    let background = train_gmm(&FeatureMatrix { rows: all_rows }, 6, 20, 2).unwrap();
    let mut model = SvModel {
        speaker,
        background,
        theta: 0.0,
        features: fp,
    };
    let mut legit_scores = Vec::new();
    let mut impostors = Vec::new();
    for (clip, label) in clips {
        let s = score(&model, &clip).unwrap();
        match label {
            Label::Legit => legit_scores.push(s),
            Label::Impostor => impostors.push((clip, s)),
        }
    }
    let impostor_scores: Vec<f64> = impostors.iter().map(|(_, s)| *s).collect();
    let (theta, eer) = eer_threshold(&legit_scores, &impostor_scores).unwrap();
    model.theta = theta;
    impostors.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap());
    (model, impostors, eer)
}

#[test]
#[ignore]
fn probe_small_eps() {
    for seed in [60u64, 61, 62] {
        let (model, impostors, eer) = build(seed);
        let gaps: Vec<String> = impostors
            .iter()
            .filter(|(_, s)| *s < model.theta)
            .take(8)
            .map(|(_, s)| format!("{:.3}", model.theta - s))
            .collect();
        println!("seed {seed}: eer {eer:.3} theta {:.3} nearest gaps {gaps:?}", model.theta);
    }

    let (model, impostors, _) = build(60);
    let sources: Vec<&(mehfest::AudioClip, f64)> = impostors
        .iter()
        .filter(|(_, s)| *s < model.theta)
        .collect();
    let eps = 0.00174;
    for (lr, iters, nes, nes_sigma) in [
        (eps / 10.0, 60usize, 20usize, 6e-4),
        (eps / 5.0, 100, 20, 6e-4),
        (eps / 5.0, 100, 30, 3e-4),
        (eps / 3.0, 150, 30, 6e-4),
    ] {
        let mut wins = 0;
        let mut margins = Vec::new();
        for (j, (clip, s0)) in sources.iter().enumerate().take(8) {
            let mut params = AttackParams::new(eps);
            params.learning_rate = lr;
            params.max_iters = iters;
            params.nes_samples = nes;
            params.nes_sigma = nes_sigma;
            params.seed = 100 + j as u64;
            let r = fakebob(clip, &model, &params).unwrap();
            let last = *r.score_trace.last().unwrap();
            if r.success {
                wins += 1;
            }
            margins.push(format!("{:.3}->{:.3}", model.theta - s0, model.theta - last));
        }
        println!("lr {lr:.2e} iters {iters} nes {nes}@{nes_sigma:.0e}: wins {wins}/8 gaps {margins:?}");
    }
}
