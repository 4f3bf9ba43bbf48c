use rosasr_core::corpus::{sample_utterance, SynthConfig, Utterance};
use rosasr_core::features::{apply_cmn, compute_mfcc, FeatureMatrix, FrameConfig};
use rosasr_core::hmm::{forced_align, train_gmm_hmm, GmmTrainConfig, TrainUtterance};
use rosasr_core::ros::compute_ros_with_pause;

fn corpus(n: usize) -> (SynthConfig, Vec<(Utterance, FeatureMatrix)>) {
    let cfg = SynthConfig {
        snr_db: 30.0,
        ..SynthConfig::default()
    };
    let lex = cfg.lexicon().unwrap();
    let frame = FrameConfig::default();
    let utts = (0..n)
        .map(|i| {
            let u = sample_utterance(&cfg, &lex, i).unwrap();
            let f = apply_cmn(&compute_mfcc(&u.samples, &frame).unwrap());
            (u, f)
        })
        .collect();
    (cfg, utts)
}

#[test]
fn em_training_and_alignment_on_synthetic_speech() {
    let (cfg, data) = corpus(240);
    let lex = cfg.lexicon().unwrap();
    let (train, held) = data.split_at(200);
    let utts: Vec<TrainUtterance> = train
        .iter()
        .map(|(u, f)| TrainUtterance {
            id: &u.id,
            features: f,
            transcript: &u.transcript,
        })
        .collect();
    let (model, report) = train_gmm_hmm(&utts, &lex, &GmmTrainConfig::default()).unwrap();

    let ll = &report.log_likelihoods;
    assert!(ll.len() >= 10);
    for w in ll.windows(2) {
        assert!(w[1] >= w[0] - 1e-8, "{ll:?}");
    }

    let names = cfg.phone_names();
    let mut agree = 0;
    let mut total = 0;
    let mut pairs = Vec::new();
    for (u, f) in held {
        let a = forced_align(f, &u.transcript, &lex, &model, true, &u.id).unwrap();
        let truth = u.truth_alignment(&names, &cfg.silence, f.frame_shift_s()).unwrap();
        let n = a.num_frames().min(truth.num_frames());
        for t in 0..n {
            let got = &model.hmms.phone(a.frames[t].phone).phone;
            agree += usize::from(*got == names[truth.frames[t].phone]);
            total += 1;
        }
        let est = compute_ros_with_pause(&a, 0.5).unwrap().phones_per_second;
        let want = compute_ros_with_pause(&truth, 0.5).unwrap().phones_per_second;
        pairs.push((est, want));
    }
    let frame_acc = agree as f64 / total as f64;
    assert!(frame_acc > 0.8, "frame agreement {frame_acc}");

    // window overhang at the speech edges biases aligned rates low; they
    // must still track the true rate closely
    let n = pairs.len() as f64;
    let (me, mw) = pairs.iter().fold((0.0, 0.0), |(a, b), (e, w)| (a + e / n, b + w / n));
    let cov: f64 = pairs.iter().map(|(e, w)| (e - me) * (w - mw)).sum();
    let ve: f64 = pairs.iter().map(|(e, _)| (e - me).powi(2)).sum();
    let vw: f64 = pairs.iter().map(|(_, w)| (w - mw).powi(2)).sum();
    let corr = cov / (ve * vw).sqrt();
    let mut ratio: Vec<f64> = pairs.iter().map(|(e, w)| e / w).collect();
    ratio.sort_by(f64::total_cmp);
    let median = ratio[ratio.len() / 2];
    assert!(corr > 0.9, "correlation {corr}");
    assert!((0.8..=1.05).contains(&median), "median ratio {median}");
}
