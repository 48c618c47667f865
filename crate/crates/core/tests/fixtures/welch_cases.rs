// Welch and pooled one-sided ("x less than y") p-values from scipy.stats.ttest_ind,
// columns: x, y, welch p, pooled p.
const CASES: &[(&[f64], &[f64], f64, f64)] = &[
    (&[84.278, 84.186, 84.507], &[84.529, 84.371, 84.354, 84.149, 84.093, 84.48], 0.4821042400249534, 0.4821062562126186),
    (&[83.987, 83.486, 83.788, 84.773, 83.375, 83.93], &[83.925, 83.94], 0.4207417618393978, 0.4559353151356788),
    (&[83.882, 83.954, 83.915], &[84.866, 84.374], 0.10607470779514849, 0.01607275427499799),
    (&[84.305, 84.153, 84.045], &[84.378, 84.637], 0.08688461779162858, 0.04468251619273299),
    (&[83.841, 83.6], &[84.465, 84.263], 0.02884029438357783, 0.02741774882084025),
    (&[83.905, 83.757, 83.699, 83.749, 83.734, 83.816], &[84.409, 84.374, 84.354], 2.769695096896592e-07, 1.5631261557965934e-06),
    (&[83.915, 84.144], &[84.11, 83.971, 84.177, 84.101], 0.3464225585795708, 0.2808548441886902),
    (&[84.099, 84.413, 83.9, 83.918, 84.314, 84.026, 84.162], &[83.981, 83.167, 83.459, 83.977, 84.823], 0.7719575193494839, 0.8180041400246307),
    (&[84.047, 83.572, 83.974], &[85.187, 82.53, 83.889], 0.4980232429120899, 0.4979197826865177),
    (&[84.055, 83.869, 84.117, 84.176, 84.17, 84.104, 84.174], &[84.066, 83.18, 83.654, 84.223], 0.8640331146248031, 0.9443771106281865),
    (&[83.748, 83.998, 83.896, 83.645], &[83.832, 83.997, 83.429], 0.6320053461805343, 0.6504186631474946),
    (&[84.112, 84.246, 84.214, 83.928, 84.055, 84.061, 84.084], &[83.994, 83.49, 84.038], 0.8621902606335122, 0.9661778087984628),
    (&[84.252, 85.308, 84.761, 84.333, 84.441, 85.521], &[84.543, 84.734, 84.507, 83.587, 84.911, 84.653, 83.684, 84.072], 0.9245381988449304, 0.9285231912970855),
    (&[84.104, 83.358, 84.345, 84.034, 83.433, 83.228], &[83.569, 83.769], 0.6407761889915351, 0.5878560076630495),
    (&[84.096, 83.98], &[84.467, 83.973, 85.284, 83.801, 83.965], 0.19837186267182608, 0.29574670263535363),
    (&[83.691, 83.023, 82.601], &[84.288, 83.475, 83.807], 0.06800278641182363, 0.06506302666086068),
    (&[83.601, 83.32, 83.664, 83.985, 84.276, 83.32], &[84.776, 84.091, 84.403, 84.019, 84.505], 0.005373481097201499, 0.005938209384585031),
    (&[84.272, 84.214, 83.649], &[84.491, 84.427, 84.798, 84.985, 83.691], 0.09914235256888847, 0.1179654702074351),
    (&[83.206, 84.423, 84.391], &[84.004, 84.028, 84.026, 83.899, 83.906, 83.906, 83.883], 0.5494844520202582, 0.5890100443400411),
    (&[83.816, 83.551], &[84.582, 84.412, 84.002, 83.39, 84.01, 83.782, 84.198], 0.06829183682901731, 0.1287580578312982),
];
