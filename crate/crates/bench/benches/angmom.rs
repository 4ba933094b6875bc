use criterion::{criterion_group, criterion_main, Criterion};
use rotqec::{slater_int, wigner3j, HalfInt};
use std::hint::black_box;

fn symbols(c: &mut Criterion) {
    let h = HalfInt::from_twice;
    c.bench_function("wigner3j (15/2 3 9/2; -1/2 1 -1/2)", |b| {
        b.iter(|| wigner3j(black_box(h(15)), h(6), h(9), h(-1), h(2), h(-1)).unwrap())
    });
    c.bench_function("slater_int over the J=7 manifold", |b| {
        b.iter(|| {
            let mut s = 0.0;
            for m in -7..=7 {
                for dm in -1..=1 {
                    s += slater_int(black_box(7), 8, m + dm, 1, dm);
                }
            }
            s
        })
    });
}

criterion_group!(benches, symbols);
criterion_main!(benches);
