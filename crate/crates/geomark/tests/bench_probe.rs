use geomark::extraction::*;

#[test]
#[ignore]
fn probe_training_speed() {
    let p = make_provider(1, 32, 256, 8).unwrap();
    let corpus = sample_corpus(&p, 5000, 1).unwrap();
    let targets = encode_corpus(&p, &corpus).unwrap();
    let cfg = TrainConfig { epochs: 5, ..TrainConfig::default() };
    let t0 = std::time::Instant::now();
    let m = train_surrogate(&corpus, &targets, &cfg).unwrap();
    let dt = t0.elapsed().as_secs_f64();
    println!("5 epochs took {dt:.2}s -> {:.1}s per 200-epoch training", dt / 5.0 * 200.0);
    println!("loss epoch1 {} final {}", m.meta.first_epoch_loss, m.meta.final_loss);
}
