use ssal::net::{Model, NetConfig};
use std::time::Instant;

fn main() {
    for base in [8usize, 16, 32] {
        let cfg = NetConfig { base_channels: base, ..NetConfig::default() };
        let m = Model::<f32>::build(&cfg, 0).unwrap();
        let x: Vec<f32> = (0..4096).map(|i| (i % 13) as f32 / 13.0).collect();
        let t = Instant::now();
        let n = 10;
        for _ in 0..n {
            let tr = m.forward_trace(&x).unwrap();
            let mut g = m.zero_grads();
            let dl: Vec<f32> = tr.probs.iter().map(|p| p - 0.5).collect();
            m.backward(&tr, &dl, &mut g);
        }
        println!("base {base}: params {} step {:.1} ms", m.param_count(), t.elapsed().as_secs_f64() * 1000.0 / n as f64);
    }
}
