use gyronet::grassmann::{self, OnbPoint};
use gyronet::linalg::{svd_thin, Mat};
use gyronet::rng::{rng_for, standard_normal_mat};
use rand::Rng;

fn main() {
    let mut rng = rng_for(5, "checks/grassmann");
    for k in 0..23 {
        let n = 4 + (rng.gen::<u64>() % 5) as usize;
        let p = 1 + (rng.gen::<u64>() % (n.min(5) as u64 - 1)) as usize;
        let max_angle = std::f64::consts::FRAC_PI_2 - 0.1;
        let u = OnbPoint::new(gyronet::rng::sample_orthonormal(&mut rng, n, p)).unwrap();
        let g = standard_normal_mat(&mut rng, n, p);
        let horiz = &g - u.as_mat() * (u.as_mat().transpose() * &g);
        let (_, sigma, _) = svd_thin(&horiz).expect("svd");
        let target = max_angle * rng.gen::<f64>();
        let scaled = horiz.scale(target / sigma[0].max(1e-12));
        let v = grassmann::exp_onb(&u, &scaled).expect("exp");
        if k < 22 { continue; }
        let utv = u.as_mat().transpose() * v.as_mat();
        let inv = utv.clone().try_inverse().unwrap();
        println!("utv inverse err = {:.3e}", (&utv * &inv - Mat::identity(p,p)).norm());
        let proj = v.as_mat() - u.as_mat() * (u.as_mat().transpose() * v.as_mat());
        let m = proj * inv;
        let (w, s, z) = svd_thin(&m).unwrap();
        let rec = &w * Mat::from_diagonal(&s) * z.transpose();
        println!("svd reconstruction err on M = {:.3e}", (&rec - &m).norm());
        println!("WtW err = {:.3e}", (w.transpose()*&w - Mat::identity(s.len(), s.len())).norm());
        println!("ZtZ err = {:.3e}", (z.transpose()*&z - Mat::identity(s.len(), s.len())).norm());
        println!("sigma = {:?}", s.as_slice());
        // expected tan(theta)
        println!("tan(1.3238771555568716) = {}", 1.3238771555568716f64.tan());
        // true rank-1 content of M
        let (ws, ss, zs) = svd_thin(&scaled).unwrap();
        let w1 = ws.column(0).into_owned(); let z1 = zs.column(0).into_owned();
        let _ = (w1, z1, ss);
    }
}
