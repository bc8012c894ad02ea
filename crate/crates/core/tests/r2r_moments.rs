use thz_core::grid::Image;
use thz_core::r2r::{draw_pair, estimate_sigma, Background, R2RConfig};
use thz_core::rng::{stream_rng, Stream};

const DRAWS: usize = 100_000;

fn scene() -> Image {
    Image::from_fn(9, 9, |r, c| 0.2 + 0.08 * r as f64 + 0.05 * c as f64)
}

#[test]
fn alpha_one_pairs_sum_to_twice_the_input() {
    let y = scene();
    let cfg = R2RConfig {
        background: Background::Fixed(0.0),
        ..R2RConfig::default()
    };
    let sigma = estimate_sigma(&y, &cfg).unwrap();
    let mut rng = stream_rng(3, Stream::Recorrupt, 0);
    for _ in 0..200 {
        let p = draw_pair(&y, &sigma, 1.0, &mut rng);
        for ((a, b), v) in p.y_hat.data.iter().zip(&p.y_tilde.data).zip(&y.data) {
            // Each of ŷ and ỹ is one correctly rounded sum.
            let ulp = f64::EPSILON * (a.abs() + b.abs());
            assert!((a + b - 2.0 * v).abs() <= ulp, "{a} + {b} vs 2·{v}");
        }
    }
}

#[test]
fn monte_carlo_moments_match_the_sigma_map() {
    let y = scene();
    let cfg = R2RConfig {
        background: Background::Fixed(0.0),
        ..R2RConfig::default()
    };
    let sigma = estimate_sigma(&y, &cfg).unwrap();
    let mut rng = stream_rng(4, Stream::Recorrupt, 0);
    let pixels = [0usize, 40, 80];
    let mut sums = [[0.0f64; 4]; 3];
    for _ in 0..DRAWS {
        let p = draw_pair(&y, &sigma, 1.0, &mut rng);
        for (s, &i) in sums.iter_mut().zip(&pixels) {
            let a = p.y_hat.data[i] - y.data[i];
            let b = p.y_tilde.data[i] - y.data[i];
            s[0] += a;
            s[1] += b;
            s[2] += a * a;
            s[3] += a * b;
        }
    }
    let n = DRAWS as f64;
    for (s, &i) in sums.iter().zip(&pixels) {
        let target = sigma.data[i] * sigma.data[i];
        let var = (s[2] - s[0] * s[0] / n) / (n - 1.0);
        let cov = (s[3] - s[0] * s[1] / n) / (n - 1.0);
        assert!((var / target - 1.0).abs() < 0.02, "pixel {i}: variance {var} vs {target}");
        assert!((cov / -target - 1.0).abs() < 0.02, "pixel {i}: covariance {cov} vs {}", -target);
    }
}
