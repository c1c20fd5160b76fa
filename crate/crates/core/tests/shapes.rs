use gait_core::data::FRAME_SIZE;
use gait_core::net::{fcnn_forward, compare_logits, ModelParams, NetConfig};
use gait_core::{PoolingMode, Tensor};

#[test]
fn full_size_chain_matches_layer_contract() {
    let c = NetConfig::paper().shape_chain().unwrap();
    assert_eq!(c.input, [2, 126, 126]);
    assert_eq!(c.conv1, [16, 120, 120]);
    assert_eq!(c.pool1, [16, 60, 60]);
    assert_eq!(c.conv2, [64, 54, 54]);
    assert_eq!(c.feature, [64, 27, 27]);
    assert_eq!(c.mcnn, [256, 21, 21]);
    assert_eq!(c.flatten, 112_896);
    assert_eq!(c.logits, 2);
    assert_eq!(NetConfig::paper().input_size, FRAME_SIZE);
}

#[test]
fn full_size_forward_produces_contract_shapes() {
    let p = ModelParams::<f32>::init(NetConfig::paper(), PoolingMode::Max, 3).unwrap();
    let x = Tensor::from_fn(&[2, 126, 126], |i| ((i * 7919) % 13 == 0) as u8 as f32);
    let f = fcnn_forward(&x, &p).unwrap();
    assert_eq!(f.shape(), [64, 27, 27]);
    let logits = compare_logits(&f, &f.map(|v| v * 0.5), &p).unwrap();
    assert_eq!(logits.shape(), [2]);
}

#[test]
fn impossible_inputs_are_rejected() {
    for size in [14, 44, 47, 48] {
        let cfg = NetConfig { input_size: size, ..NetConfig::gradcheck() };
        assert!(cfg.shape_chain().is_err(), "size {size}");
    }
    for size in [46, 54, 62, 70, 126] {
        let cfg = NetConfig { input_size: size, ..NetConfig::gradcheck() };
        assert!(cfg.shape_chain().is_ok(), "size {size}");
    }
}
