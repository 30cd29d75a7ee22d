use caterpillars::scaling::time_reversal_factor_grid;

fn main() {
    for tm in [2.0, 3.0, 4.0] {
        for xm in [-0.4, -0.2, 0.0, 0.2] {
            for half in [1.0f64, 1.5] {
                let us: Vec<f64> = (-2..=2).map(|k| half * k as f64 / 2.0).collect();
                let mut ok_all = true;
                let mut lines = String::new();
                for (a, b, cat) in [(1.0, 0.0, 0.0), (0.0, 1.0, 0.0), (2.0, 1.0, 0.0), (1.0, 0.0, 0.8)] {
                    let mut sups = Vec::new();
                    for eps in [0.2, 0.1, 0.05] {
                        match time_reversal_factor_grid(0.5, a, b, cat, tm, xm, &us, eps) {
                            Ok(g) => sups.push(g.sup_diff),
                            Err(_) => { sups.clear(); break; }
                        }
                    }
                    if sups.len() < 3 || !(sups[0] > sups[1] && sups[1] > sups[2]) {
                        ok_all = false;
                    }
                    lines += &format!(" [{:.3} {:.3} {:.3}]", sups.first().unwrap_or(&-1.0), sups.get(1).unwrap_or(&-1.0), sups.get(2).unwrap_or(&-1.0));
                }
                if ok_all {
                    println!("t={tm} x={xm} half={half}:{lines}  <-- monotone for all");
                }
            }
        }
    }
}
