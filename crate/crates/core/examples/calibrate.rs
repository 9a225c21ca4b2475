use spectrum_market::model::{calibrate_snr_scale, ChannelModelConfig};

fn main() {
    let base = ChannelModelConfig::default();
    let scale = calibrate_snr_scale(&base, 5.0, 68.0, 200_000, 1);
    let cfg = ChannelModelConfig {
        snr_scale: scale,
        ..base
    };
    println!("snr_scale = {scale:e}");
    println!(
        "mean at 5 m  = {:.3} Mbit/s",
        cfg.mean_offset_at(5.0, 200_000, 1)
    );
    println!(
        "mean at 50 m = {:.3} Mbit/s",
        cfg.mean_offset_at(50.0, 200_000, 1)
    );
}
