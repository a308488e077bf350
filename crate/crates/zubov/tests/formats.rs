use zubov::formats::{self, Checkpoint, CertificateReport, Metadata, OutcomeReport, QuadReport};
use zubov_core::linlyap::{certify_quadratic, QuadSettings};
use zubov_core::proa::{Heatmap, Stage};
use zubov_core::verify::UnknownReason;
use zubov_core::{expr::parse, Hyperbox, NeuralFunction, StochasticSystem, ValueSample, VerifyOutcome, VerifyStatus};

fn linear() -> StochasticSystem {
    let e = |s: &str| parse(s, 2).unwrap();
    StochasticSystem::new(
        vec![e("-x1 + 0.5*x2"), e("-x2")],
        vec![vec![e("0.2*x1")], vec![e("0.2*x2")]],
        e("0.1*(x1^2 + x2^2)"),
        Hyperbox::cube(2, 1.0),
    )
    .unwrap()
}

#[test]
fn checkpoint_round_trip_is_exact() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("net.json");
    let net = NeuralFunction::glorot(&[2, 10, 10, 10, 1], 11).unwrap();
    formats::save_checkpoint(&path, &net).unwrap();
    let back = formats::load_checkpoint(&path).unwrap();
    assert_eq!(back.sizes(), net.sizes());
    let (a, b) = (net.parameters(), back.parameters());
    assert!(a.iter().zip(&b).all(|(x, y)| x.to_bits() == y.to_bits()));

    let text = std::fs::read_to_string(&path).unwrap();
    let doc: serde_json::Value = serde_json::from_str(&text).unwrap();
    assert_eq!(doc["format"], "zubov-network");
    assert_eq!(doc["activation"], "tanh");
    assert_eq!(doc["layers"][0]["weights"].as_array().unwrap().len(), 10);
    assert_eq!(doc["layers"][0]["weights"][3].as_array().unwrap().len(), 2);
    assert_eq!(doc["layers"][0]["weights"][3][1].as_f64().unwrap(), net.layers()[0].weight(3, 1));
}

#[test]
fn malformed_checkpoints_are_rejected() {
    let net = NeuralFunction::glorot(&[2, 3, 1], 0).unwrap();
    let mut c = Checkpoint::from_net(&net);
    c.layers[1].biases.push(0.0);
    assert!(c.to_net().is_err());
    let mut c = Checkpoint::from_net(&net);
    c.activation = "relu".into();
    assert!(c.to_net().is_err());
    let mut c = Checkpoint::from_net(&net);
    c.version = 2;
    assert!(c.to_net().is_err());
}

#[test]
fn value_dataset_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("data.csv");
    let data = vec![
        ValueSample { point: vec![0.1, -2.5], w_hat: 0.25 },
        ValueSample { point: vec![1.0 / 3.0, 0.0], w_hat: 1.0 },
    ];
    formats::write_value_dataset(&path, &data, 2).unwrap();
    let text = std::fs::read_to_string(&path).unwrap();
    assert!(text.starts_with("x1,x2,w_hat\n"));
    assert_eq!(formats::read_value_dataset(&path).unwrap(), data);
}

#[test]
fn pgm_scales_probabilities() {
    let map = Heatmap { nx: 3, ny: 1, cells: vec![(vec![0.0], 0.0), (vec![1.0], 0.5), (vec![2.0], 1.0)] };
    let bytes = formats::pgm_bytes(&map);
    let header = b"P5\n3 1\n255\n";
    assert_eq!(&bytes[..header.len()], header);
    assert_eq!(&bytes[header.len()..], &[0, 128, 255]);
}

#[test]
fn outcome_reports_round_trip() {
    let outcomes = [
        VerifyOutcome { status: VerifyStatus::Certified, boxes: 12, max_depth: 3 },
        VerifyOutcome { status: VerifyStatus::Falsified { witness: vec![0.5, -0.25], value: Some(1.5) }, boxes: 4, max_depth: 2 },
        VerifyOutcome {
            status: VerifyStatus::Unknown { cell: Hyperbox::from_bounds(&[(0.0, 0.1), (0.2, 0.3)]), reason: UnknownReason::Budget },
            boxes: 100,
            max_depth: 9,
        },
    ];
    for o in outcomes {
        let r = OutcomeReport::from(&o);
        let json = serde_json::to_string(&r).unwrap();
        let back: OutcomeReport = serde_json::from_str(&json).unwrap();
        assert_eq!(back.to_outcome().unwrap(), o);
    }
}

#[test]
fn quadratic_report_round_trip() {
    let cert = certify_quadratic(&linear(), &QuadSettings::default()).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("q.json");
    let report = QuadReport { quadratic: (&cert).into(), metadata: Metadata::now(std::time::Duration::ZERO) };
    formats::write_json(&path, &report).unwrap();
    let back: QuadReport = formats::read_json(&path).unwrap();
    let c = back.quadratic.to_certificate().unwrap();
    assert_eq!(c.p, cert.p);
    assert_eq!(c.c2, cert.c2);
    assert_eq!(c.extended_outcome, cert.extended_outcome);
}

#[test]
fn failed_certificate_report_names_the_stage() {
    let cert = certify_quadratic(&linear(), &QuadSettings::default()).unwrap();
    let err = zubov_core::proa::CompositeError {
        stage: Stage::Beta2,
        detail: "no probe passed".into(),
        outcome: None,
        partial: vec![("zeta", 1e-3)],
    };
    let r = CertificateReport::failed(&cert, &err, "checkpoint.json", Metadata::now(std::time::Duration::ZERO));
    assert!(!r.complete);
    let msg = r.to_certificate(NeuralFunction::zeros(&[2, 3, 1]).unwrap()).unwrap_err();
    assert!(msg.contains("beta2 search"), "{msg}");
}
