use pco_core::GrayImage;
use pco_unet::{build_unet, LayerKind, Tensor, UNetConfig};

fn conv(cin: usize, cout: usize, k: usize) -> usize {
    cin * cout * k * k + cout
}

#[test]
fn parameter_count_matches_hand_tally() {
    // depth 2, base 16, one input channel
    let encoder = conv(1, 16, 3) + conv(16, 16, 3) + conv(16, 32, 3) + conv(32, 32, 3);
    let bottleneck = conv(32, 64, 3) + conv(64, 64, 3);
    let up1 = 64 * 32 * 4 + 32;
    let dec1 = conv(64, 32, 3) + conv(32, 32, 3);
    let up0 = 32 * 16 * 4 + 16;
    let dec0 = conv(32, 16, 3) + conv(16, 16, 3);
    let head = conv(16, 1, 1);
    let tally = encoder + bottleneck + up1 + dec1 + up0 + dec0 + head;
    assert_eq!(tally, 116_753);

    let net = build_unet(
        UNetConfig {
            depth: 2,
            base_channels: 16,
            input_size: 64,
            in_channels: 1,
        },
        0,
    )
    .unwrap();
    assert_eq!(net.param_count(), tally);
}

#[test]
fn channel_law_and_skips() {
    for depth in 1..=4 {
        let cfg = UNetConfig {
            depth,
            base_channels: 8,
            input_size: 64,
            in_channels: 1,
        };
        let net = build_unet(cfg, 0).unwrap();
        let enc: Vec<usize> = (0..depth).map(|i| 8 << i).collect();
        assert_eq!(net.encoder_channels(), enc);
        assert_eq!(net.bottleneck_channels(), 8 << depth);
        let mut dec = enc.clone();
        dec.reverse();
        assert_eq!(net.decoder_channels(), dec);
        assert_eq!(net.skip_connections(), depth);
        let head = net.layers().last().unwrap();
        assert_eq!(head.kind, LayerKind::Conv1x1Sigmoid);
        assert_eq!(head.out_channels, 1);
        let pools = net
            .layers()
            .iter()
            .filter(|l| l.kind == LayerKind::MaxPool2x2)
            .count();
        assert_eq!(pools, depth);
    }
}

#[test]
fn rejects_indivisible_inputs() {
    assert!(build_unet(
        UNetConfig {
            depth: 3,
            base_channels: 8,
            input_size: 60,
            in_channels: 1
        },
        0
    )
    .is_err());
    assert!(build_unet(
        UNetConfig {
            depth: 2,
            base_channels: 8,
            input_size: 60,
            in_channels: 1
        },
        0
    )
    .is_ok());
}

#[test]
fn shape_range_and_batch_independence() {
    let cfg = UNetConfig {
        depth: 3,
        base_channels: 8,
        input_size: 32,
        in_channels: 1,
    };
    let net = build_unet(cfg, 3).unwrap();
    let a =
        GrayImage::from_vec(32, 32, (0..1024).map(|i| (i % 37) as f32 / 36.0).collect()).unwrap();
    let b = GrayImage::from_vec(32, 32, (0..1024).map(|i| (i % 5) as f32 / 4.0).collect()).unwrap();
    let out = net
        .forward(&Tensor::from_images(&[a.clone(), b, a]).unwrap())
        .unwrap();
    assert_eq!(out.shape(), [3, 1, 32, 32]);
    assert!(out
        .as_slice()
        .iter()
        .all(|&p| p > 0.0 && p < 1.0 && p.is_finite()));
    assert_eq!(out.sample(0), out.sample(2));

    let wrong = GrayImage::new(16, 16);
    assert!(net
        .forward(&Tensor::from_images(&[wrong]).unwrap())
        .is_err());
}

#[test]
fn shapes_preserved_for_all_depths_and_sizes() {
    for depth in 1..=4 {
        for size in [32, 64, 128] {
            let cfg = UNetConfig {
                depth,
                base_channels: 4,
                input_size: size,
                in_channels: 1,
            };
            let net = build_unet(cfg, 1).unwrap();
            let out = net
                .forward(&Tensor::from_images(&[GrayImage::filled(size, size, 0.3)]).unwrap())
                .unwrap();
            assert_eq!(out.shape(), [1, 1, size, size]);
        }
    }
}
