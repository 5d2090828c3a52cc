// Nested Gauss-Patterson quadrature rules on (-1, 1), levels 1..=7.
// Level k has 2^k - 1 nodes; rules are symmetric about zero, so only the
// strictly positive nodes are stored (ascending) with their weights, plus
// the weight of the center node 0. Values are correctly rounded from a
// 90-digit construction; exactness and nestedness are enforced by tests.

pub(crate) const CENTER_WEIGHT_L1: f64 = 2.0;
pub(crate) const POSITIVE_NODES_L1: [f64; 0] = [
];
pub(crate) const POSITIVE_WEIGHTS_L1: [f64; 0] = [
];

pub(crate) const CENTER_WEIGHT_L2: f64 = 0.8888888888888888;
pub(crate) const POSITIVE_NODES_L2: [f64; 1] = [
    0.7745966692414834,
];
pub(crate) const POSITIVE_WEIGHTS_L2: [f64; 1] = [
    0.5555555555555556,
];

pub(crate) const CENTER_WEIGHT_L3: f64 = 0.45091653865847414;
pub(crate) const POSITIVE_NODES_L3: [f64; 3] = [
    0.43424374934680254,
    0.7745966692414834,
    0.9604912687080203,
];
pub(crate) const POSITIVE_WEIGHTS_L3: [f64; 3] = [
    0.40139741477596225,
    0.26848808986833345,
    0.10465622602646726,
];

pub(crate) const CENTER_WEIGHT_L4: f64 = 0.2255104997982067;
pub(crate) const POSITIVE_NODES_L4: [f64; 7] = [
    0.2233866864289669,
    0.43424374934680254,
    0.6211029467372264,
    0.7745966692414834,
    0.888459232872257,
    0.9604912687080203,
    0.993831963212755,
];
pub(crate) const POSITIVE_WEIGHTS_L4: [f64; 7] = [
    0.2191568584015875,
    0.20062852937698902,
    0.1715119091363914,
    0.13441525524378423,
    0.09292719531512454,
    0.05160328299707974,
    0.01700171962994026,
];

pub(crate) const CENTER_WEIGHT_L5: f64 = 0.11275525672076869;
pub(crate) const POSITIVE_NODES_L5: [f64; 15] = [
    0.11248894313318662,
    0.2233866864289669,
    0.3311353932579768,
    0.43424374934680254,
    0.5313197436443756,
    0.6211029467372264,
    0.7024962064915271,
    0.7745966692414834,
    0.8367259381688688,
    0.888459232872257,
    0.9296548574297401,
    0.9604912687080203,
    0.9815311495537401,
    0.993831963212755,
    0.9990981249676676,
];
pub(crate) const POSITIVE_WEIGHTS_L5: [f64; 15] = [
    0.11195687302095346,
    0.10957842105592464,
    0.1056698935802348,
    0.10031427861179558,
    0.09362710998126447,
    0.08575592004999034,
    0.07687962049900353,
    0.0672077542959907,
    0.05697950949412336,
    0.04646289326175799,
    0.03595710330712932,
    0.025807598096176654,
    0.01644604985438781,
    0.008434565739321106,
    0.0025447807915618746,
];

pub(crate) const CENTER_WEIGHT_L6: f64 = 0.056377628360384714;
pub(crate) const POSITIVE_NODES_L6: [f64; 31] = [
    0.05634431304659279,
    0.11248894313318662,
    0.16823525155220748,
    0.2233866864289669,
    0.2777498220218243,
    0.3311353932579768,
    0.38335932419873037,
    0.43424374934680254,
    0.48361802694584105,
    0.5313197436443756,
    0.5771957100520458,
    0.6211029467372264,
    0.6629096600247806,
    0.7024962064915271,
    0.7397560443526947,
    0.7745966692414834,
    0.8069405319502176,
    0.8367259381688688,
    0.8639079381936905,
    0.888459232872257,
    0.9103711569570043,
    0.9296548574297401,
    0.9463428583734029,
    0.9604912687080203,
    0.9721828747485818,
    0.9815311495537401,
    0.9886847575474295,
    0.993831963212755,
    0.997206259372222,
    0.9990981249676676,
    0.9998728881203576,
];
pub(crate) const POSITIVE_WEIGHTS_L6: [f64; 31] = [
    0.0562776998312543,
    0.05597843651047632,
    0.05548140435655936,
    0.054789210527962866,
    0.05390549933526606,
    0.05283494679011652,
    0.051583253952048456,
    0.05015713930589954,
    0.0485643304066732,
    0.04681355499062801,
    0.0449145316536322,
    0.04287796002500773,
    0.04071551011694432,
    0.03843981024945553,
    0.03606443278078257,
    0.03360387714820773,
    0.031073551111687966,
    0.02848975474583355,
    0.025869679327214748,
    0.02323144663991027,
    0.02059423391591271,
    0.01797855156812827,
    0.015406750466559498,
    0.012903800100351265,
    0.010498246909621322,
    0.00822300795723593,
    0.006115506822117246,
    0.004217630441558855,
    0.0025790497946856883,
    0.001265156556230068,
    0.00036322148184553065,
];

pub(crate) const CENTER_WEIGHT_L7: f64 = 0.028188814180192357;
pub(crate) const POSITIVE_NODES_L7: [f64; 63] = [
    0.028184648949745695,
    0.05634431304659279,
    0.08445404008371088,
    0.11248894313318662,
    0.14042423315256017,
    0.16823525155220748,
    0.19589750271110015,
    0.2233866864289669,
    0.2506787303034832,
    0.2777498220218243,
    0.30457644155671404,
    0.3311353932579768,
    0.3574038378315322,
    0.38335932419873037,
    0.4089798212298887,
    0.43424374934680254,
    0.45913001198983233,
    0.48361802694584105,
    0.5076877575337166,
    0.5313197436443756,
    0.5544951326319325,
    0.5771957100520458,
    0.5994039302422429,
    0.6211029467372264,
    0.6422766425097595,
    0.6629096600247806,
    0.6829874310910792,
    0.7024962064915271,
    0.7214230853700989,
    0.7397560443526947,
    0.7574839663805136,
    0.7745966692414834,
    0.7910849337998483,
    0.8069405319502176,
    0.8221562543649804,
    0.8367259381688688,
    0.8506444947683502,
    0.8639079381936905,
    0.8765134144847053,
    0.888459232872257,
    0.89974489977694,
    0.9103711569570043,
    0.9203400254700124,
    0.9296548574297401,
    0.9383203977795929,
    0.9463428583734029,
    0.9537300064257611,
    0.9604912687080203,
    0.9666378515584165,
    0.9721828747485818,
    0.9771415146397056,
    0.9815311495537401,
    0.9853714995985224,
    0.9886847575474295,
    0.9914957211780668,
    0.993831963212755,
    0.9957241046991968,
    0.997206259372222,
    0.998316635302943,
    0.9990981249676676,
    0.9995987998959928,
    0.9998728881203576,
    0.9999824297473996,
];
pub(crate) const POSITIVE_WEIGHTS_L7: [f64; 63] = [
    0.0281763190330166,
    0.02813884991562715,
    0.028076455793817248,
    0.02798921825523816,
    0.027877251476613702,
    0.02774070217827968,
    0.027579749566481872,
    0.027394605263981433,
    0.027185513229624793,
    0.02695274966763303,
    0.02669662292745036,
    0.02641747339505826,
    0.0261156733767061,
    0.025791626976024228,
    0.025445769965464767,
    0.02507856965294977,
    0.024690524744487678,
    0.0242821652033366,
    0.02385405210603854,
    0.023406777495314005,
    0.02294096422938775,
    0.0224572658268161,
    0.021956366305317825,
    0.021438980012503866,
    0.020905851445812022,
    0.02035775505847216,
    0.019795495048097498,
    0.019219905124727765,
    0.01863184825613879,
    0.018032216390391285,
    0.017421930159464173,
    0.016801938574103864,
    0.01617321872957772,
    0.015536775555843983,
    0.014893641664815181,
    0.014244877372916775,
    0.013591571009765546,
    0.012934839663607374,
    0.01227583056008277,
    0.011615723319955135,
    0.010955733387837901,
    0.010297116957956355,
    0.009641177729702537,
    0.008989275784064136,
    0.008342838753968157,
    0.007703375233279741,
    0.0070724899954335545,
    0.00645190005017574,
    0.00584344987583565,
    0.005249123454808809,
    0.00467105037211415,
    0.004111503978655484,
    0.0035728927835203214,
    0.0030577534101614333,
    0.002568764943735547,
    0.002108815246002078,
    0.0016811428666103547,
    0.001289524077047459,
    0.0009383698261265061,
    0.0006326074186437326,
    0.0003777469041602234,
    0.00018073865693322535,
    5.053667218915844e-05,
];

