//! Radio channel in isolation: free-space path loss, power calibration for a
//! target range, and how interference kills concurrent receptions.

use netdist::channel::{
    path_loss_db, power_for_range, resolve_receptions, RadioConfig, Transmit, TransmissionPlan,
};

fn main() {
    let radio = RadioConfig::default();

    println!("path loss at 2.4 GHz:");
    for d in [10.0, 50.0, 100.0, 250.0, 500.0] {
        println!("  {d:>5} m -> {:7.3} dB", path_loss_db(d, radio.center_freq_hz));
    }

    let power = power_for_range(250.0, &radio);
    println!("\ntransmit power for a 250 m range: {power:.2} dBm");

    // Two transmitters equidistant from one listener: neither decodes.
    let radio = radio.with_range(250.0);
    let positions = vec![[-100.0, 0.0], [100.0, 0.0], [0.0, 0.0]];
    let plan = TransmissionPlan {
        intents: vec![Transmit::To(2), Transmit::To(2), Transmit::Silent],
    };
    let outcome = resolve_receptions(&plan, &positions, &radio);
    println!("\ntwo equidistant transmitters, one listener in the middle:");
    println!("  listener decodes: {:?}", outcome.decoded_from[2]);

    // Alone, the same transmitter is decoded fine.
    let plan = TransmissionPlan {
        intents: vec![Transmit::To(2), Transmit::Silent, Transmit::Silent],
    };
    let outcome = resolve_receptions(&plan, &positions, &radio);
    println!("  same transmitter alone:  {:?}", outcome.decoded_from[2]);
}
