// Generated from matplotlib's listed colormap tables (256 RGB entries each).

pub(crate) const MAGMA: [[f64; 3]; 256] = [
    [0.001462, 0.000466, 0.013866],
    [0.002258, 0.001295, 0.018331],
    [0.003279, 0.002305, 0.023708],
    [0.004512, 0.00349, 0.029965],
    [0.00595, 0.004843, 0.03713],
    [0.007588, 0.006356, 0.044973],
    [0.009426, 0.008022, 0.052844],
    [0.011465, 0.009828, 0.06075],
    [0.013708, 0.011771, 0.068667],
    [0.016156, 0.01384, 0.076603],
    [0.018815, 0.016026, 0.084584],
    [0.021692, 0.01832, 0.09261],
    [0.024792, 0.020715, 0.100676],
    [0.028123, 0.023201, 0.108787],
    [0.031696, 0.025765, 0.116965],
    [0.03552, 0.028397, 0.125209],
    [0.039608, 0.03109, 0.133515],
    [0.04383, 0.03383, 0.141886],
    [0.048062, 0.036607, 0.150327],
    [0.05232, 0.039407, 0.158841],
    [0.056615, 0.04216, 0.167446],
    [0.060949, 0.044794, 0.176129],
    [0.06533, 0.047318, 0.184892],
    [0.069764, 0.049726, 0.193735],
    [0.074257, 0.052017, 0.20266],
    [0.078815, 0.054184, 0.211667],
    [0.083446, 0.056225, 0.220755],
    [0.088155, 0.058133, 0.229922],
    [0.092949, 0.059904, 0.239164],
    [0.097833, 0.061531, 0.248477],
    [0.102815, 0.06301, 0.257854],
    [0.107899, 0.064335, 0.267289],
    [0.113094, 0.065492, 0.276784],
    [0.118405, 0.066479, 0.286321],
    [0.123833, 0.067295, 0.295879],
    [0.12938, 0.067935, 0.305443],
    [0.135053, 0.068391, 0.315],
    [0.140858, 0.068654, 0.324538],
    [0.146785, 0.068738, 0.334011],
    [0.152839, 0.068637, 0.343404],
    [0.159018, 0.068354, 0.352688],
    [0.165308, 0.067911, 0.361816],
    [0.171713, 0.067305, 0.370771],
    [0.178212, 0.066576, 0.379497],
    [0.184801, 0.065732, 0.387973],
    [0.19146, 0.064818, 0.396152],
    [0.198177, 0.063862, 0.404009],
    [0.204935, 0.062907, 0.411514],
    [0.211718, 0.061992, 0.418647],
    [0.218512, 0.061158, 0.425392],
    [0.225302, 0.060445, 0.431742],
    [0.232077, 0.059889, 0.437695],
    [0.238826, 0.059517, 0.443256],
    [0.245543, 0.059352, 0.448436],
    [0.25222, 0.059415, 0.453248],
    [0.258857, 0.059706, 0.45771],
    [0.265447, 0.060237, 0.46184],
    [0.271994, 0.060994, 0.46566],
    [0.278493, 0.061978, 0.46919],
    [0.284951, 0.063168, 0.472451],
    [0.291366, 0.064553, 0.475462],
    [0.29774, 0.066117, 0.478243],
    [0.304081, 0.067835, 0.480812],
    [0.310382, 0.069702, 0.483186],
    [0.316654, 0.07169, 0.48538],
    [0.322899, 0.073782, 0.487408],
    [0.329114, 0.075972, 0.489287],
    [0.335308, 0.078236, 0.491024],
    [0.341482, 0.080564, 0.492631],
    [0.347636, 0.082946, 0.494121],
    [0.353773, 0.085373, 0.495501],
    [0.359898, 0.087831, 0.496778],
    [0.366012, 0.090314, 0.49796],
    [0.372116, 0.092816, 0.499053],
    [0.378211, 0.095332, 0.500067],
    [0.384299, 0.097855, 0.501002],
    [0.390384, 0.100379, 0.501864],
    [0.396467, 0.102902, 0.502658],
    [0.402548, 0.10542, 0.503386],
    [0.408629, 0.10793, 0.504052],
    [0.414709, 0.110431, 0.504662],
    [0.420791, 0.11292, 0.505215],
    [0.426877, 0.115395, 0.505714],
    [0.432967, 0.117855, 0.50616],
    [0.439062, 0.120298, 0.506555],
    [0.445163, 0.122724, 0.506901],
    [0.451271, 0.125132, 0.507198],
    [0.457386, 0.127522, 0.507448],
    [0.463508, 0.129893, 0.507652],
    [0.46964, 0.132245, 0.507809],
    [0.47578, 0.134577, 0.507921],
    [0.481929, 0.136891, 0.507989],
    [0.488088, 0.139186, 0.508011],
    [0.494258, 0.141462, 0.507988],
    [0.500438, 0.143719, 0.50792],
    [0.506629, 0.145958, 0.507806],
    [0.512831, 0.148179, 0.507648],
    [0.519045, 0.150383, 0.507443],
    [0.52527, 0.152569, 0.507192],
    [0.531507, 0.154739, 0.506895],
    [0.537755, 0.156894, 0.506551],
    [0.544015, 0.159033, 0.506159],
    [0.550287, 0.161158, 0.505719],
    [0.556571, 0.163269, 0.50523],
    [0.562866, 0.165368, 0.504692],
    [0.569172, 0.167454, 0.504105],
    [0.57549, 0.16953, 0.503466],
    [0.581819, 0.171596, 0.502777],
    [0.588158, 0.173652, 0.502035],
    [0.594508, 0.175701, 0.501241],
    [0.600868, 0.177743, 0.500394],
    [0.607238, 0.179779, 0.499492],
    [0.613617, 0.181811, 0.498536],
    [0.620005, 0.18384, 0.497524],
    [0.626401, 0.185867, 0.496456],
    [0.632805, 0.187893, 0.495332],
    [0.639216, 0.189921, 0.49415],
    [0.645633, 0.191952, 0.49291],
    [0.652056, 0.193986, 0.491611],
    [0.658483, 0.196027, 0.490253],
    [0.664915, 0.198075, 0.488836],
    [0.671349, 0.200133, 0.487358],
    [0.677786, 0.202203, 0.485819],
    [0.684224, 0.204286, 0.484219],
    [0.690661, 0.206384, 0.482558],
    [0.697098, 0.208501, 0.480835],
    [0.703532, 0.210638, 0.479049],
    [0.709962, 0.212797, 0.477201],
    [0.716387, 0.214982, 0.47529],
    [0.722805, 0.217194, 0.473316],
    [0.729216, 0.219437, 0.471279],
    [0.735616, 0.221713, 0.46918],
    [0.742004, 0.224025, 0.467018],
    [0.748378, 0.226377, 0.464794],
    [0.754737, 0.228772, 0.462509],
    [0.761077, 0.231214, 0.460162],
    [0.767398, 0.233705, 0.457755],
    [0.773695, 0.236249, 0.455289],
    [0.779968, 0.238851, 0.452765],
    [0.786212, 0.241514, 0.450184],
    [0.792427, 0.244242, 0.447543],
    [0.798608, 0.24704, 0.444848],
    [0.804752, 0.249911, 0.442102],
    [0.810855, 0.252861, 0.439305],
    [0.816914, 0.255895, 0.436461],
    [0.822926, 0.259016, 0.433573],
    [0.828886, 0.262229, 0.430644],
    [0.834791, 0.26554, 0.427671],
    [0.840636, 0.268953, 0.424666],
    [0.846416, 0.272473, 0.421631],
    [0.852126, 0.276106, 0.418573],
    [0.857763, 0.279857, 0.415496],
    [0.86332, 0.283729, 0.412403],
    [0.868793, 0.287728, 0.409303],
    [0.874176, 0.291859, 0.406205],
    [0.879464, 0.296125, 0.403118],
    [0.884651, 0.30053, 0.400047],
    [0.889731, 0.305079, 0.397002],
    [0.8947, 0.309773, 0.393995],
    [0.899552, 0.314616, 0.391037],
    [0.904281, 0.31961, 0.388137],
    [0.908884, 0.324755, 0.385308],
    [0.913354, 0.330052, 0.382563],
    [0.917689, 0.3355, 0.379915],
    [0.921884, 0.341098, 0.377376],
    [0.925937, 0.346844, 0.374959],
    [0.929845, 0.352734, 0.372677],
    [0.933606, 0.358764, 0.370541],
    [0.937221, 0.364929, 0.368567],
    [0.940687, 0.371224, 0.366762],
    [0.944006, 0.377643, 0.365136],
    [0.94718, 0.384178, 0.363701],
    [0.95021, 0.39082, 0.362468],
    [0.953099, 0.397563, 0.361438],
    [0.955849, 0.4044, 0.360619],
    [0.958464, 0.411324, 0.360014],
    [0.960949, 0.418323, 0.35963],
    [0.96331, 0.42539, 0.359469],
    [0.965549, 0.432519, 0.359529],
    [0.967671, 0.439703, 0.35981],
    [0.96968, 0.446936, 0.360311],
    [0.971582, 0.45421, 0.36103],
    [0.973381, 0.46152, 0.361965],
    [0.975082, 0.468861, 0.363111],
    [0.97669, 0.476226, 0.364466],
    [0.97821, 0.483612, 0.366025],
    [0.979645, 0.491014, 0.367783],
    [0.981, 0.498428, 0.369734],
    [0.982279, 0.505851, 0.371874],
    [0.983485, 0.51328, 0.374198],
    [0.984622, 0.520713, 0.376698],
    [0.985693, 0.528148, 0.379371],
    [0.9867, 0.535582, 0.38221],
    [0.987646, 0.543015, 0.38521],
    [0.988533, 0.550446, 0.388365],
    [0.989363, 0.557873, 0.391671],
    [0.990138, 0.565296, 0.395122],
    [0.990871, 0.572706, 0.398714],
    [0.991558, 0.580107, 0.402441],
    [0.992196, 0.587502, 0.406299],
    [0.992785, 0.594891, 0.410283],
    [0.993326, 0.602275, 0.41439],
    [0.993834, 0.609644, 0.418613],
    [0.994309, 0.616999, 0.42295],
    [0.994738, 0.62435, 0.427397],
    [0.995122, 0.631696, 0.431951],
    [0.99548, 0.639027, 0.436607],
    [0.99581, 0.646344, 0.441361],
    [0.996096, 0.653659, 0.446213],
    [0.996341, 0.660969, 0.45116],
    [0.99658, 0.668256, 0.456192],
    [0.996775, 0.675541, 0.461314],
    [0.996925, 0.682828, 0.466526],
    [0.997077, 0.690088, 0.471811],
    [0.997186, 0.697349, 0.477182],
    [0.997254, 0.704611, 0.482635],
    [0.997325, 0.711848, 0.488154],
    [0.997351, 0.719089, 0.493755],
    [0.997351, 0.726324, 0.499428],
    [0.997341, 0.733545, 0.505167],
    [0.997285, 0.740772, 0.510983],
    [0.997228, 0.747981, 0.516859],
    [0.997138, 0.75519, 0.522806],
    [0.997019, 0.762398, 0.528821],
    [0.996898, 0.769591, 0.534892],
    [0.996727, 0.776795, 0.541039],
    [0.996571, 0.783977, 0.547233],
    [0.996369, 0.791167, 0.553499],
    [0.996162, 0.798348, 0.55982],
    [0.995932, 0.805527, 0.566202],
    [0.99568, 0.812706, 0.572645],
    [0.995424, 0.819875, 0.57914],
    [0.995131, 0.827052, 0.585701],
    [0.994851, 0.834213, 0.592307],
    [0.994524, 0.841387, 0.598983],
    [0.994222, 0.84854, 0.605696],
    [0.993866, 0.855711, 0.612482],
    [0.993545, 0.862859, 0.619299],
    [0.99317, 0.870024, 0.626189],
    [0.992831, 0.877168, 0.633109],
    [0.99244, 0.88433, 0.640099],
    [0.992089, 0.89147, 0.647116],
    [0.991688, 0.898627, 0.654202],
    [0.991332, 0.905763, 0.661309],
    [0.99093, 0.912915, 0.668481],
    [0.99057, 0.920049, 0.675675],
    [0.990175, 0.927196, 0.682926],
    [0.989815, 0.934329, 0.690198],
    [0.989434, 0.94147, 0.697519],
    [0.989077, 0.948604, 0.704863],
    [0.988717, 0.955742, 0.712242],
    [0.988367, 0.962878, 0.719649],
    [0.988033, 0.970012, 0.727077],
    [0.987691, 0.977154, 0.734536],
    [0.987387, 0.984288, 0.742002],
    [0.987053, 0.991438, 0.749504],
];

pub(crate) const CIVIDIS: [[f64; 3]; 256] = [
    [0.0, 0.135112, 0.304751],
    [0.0, 0.138068, 0.311105],
    [0.0, 0.141013, 0.317579],
    [0.0, 0.143951, 0.323982],
    [0.0, 0.146877, 0.330479],
    [0.0, 0.149791, 0.337065],
    [0.0, 0.152673, 0.343704],
    [0.0, 0.155377, 0.3505],
    [0.0, 0.157932, 0.357521],
    [0.0, 0.160495, 0.364534],
    [0.0, 0.163058, 0.371608],
    [0.0, 0.165621, 0.378769],
    [0.0, 0.168204, 0.385902],
    [0.0, 0.1708, 0.3931],
    [0.0, 0.17342, 0.400353],
    [0.0, 0.176082, 0.407577],
    [0.0, 0.178802, 0.414764],
    [0.0, 0.18161, 0.421859],
    [0.0, 0.18455, 0.428802],
    [0.0, 0.186915, 0.435532],
    [0.0, 0.188769, 0.439563],
    [0.0, 0.19095, 0.441085],
    [0.0, 0.193366, 0.441561],
    [0.003602, 0.195911, 0.441564],
    [0.017852, 0.198528, 0.441248],
    [0.03211, 0.201199, 0.440785],
    [0.046205, 0.203903, 0.440196],
    [0.058378, 0.206629, 0.439531],
    [0.068968, 0.209372, 0.438863],
    [0.078624, 0.212122, 0.438105],
    [0.087465, 0.214879, 0.437342],
    [0.095645, 0.217643, 0.436593],
    [0.103401, 0.220406, 0.43579],
    [0.110658, 0.22317, 0.435067],
    [0.117612, 0.225935, 0.434308],
    [0.124291, 0.228697, 0.433547],
    [0.130669, 0.231458, 0.43284],
    [0.13683, 0.234216, 0.432148],
    [0.142852, 0.236972, 0.431404],
    [0.148638, 0.239724, 0.430752],
    [0.154261, 0.242475, 0.43012],
    [0.159733, 0.245221, 0.429528],
    [0.165113, 0.247965, 0.428908],
    [0.170362, 0.250707, 0.428325],
    [0.17549, 0.253444, 0.42779],
    [0.180503, 0.25618, 0.427299],
    [0.185453, 0.258914, 0.426788],
    [0.190303, 0.261644, 0.426329],
    [0.195057, 0.264372, 0.425924],
    [0.199764, 0.267099, 0.425497],
    [0.204385, 0.269823, 0.425126],
    [0.208926, 0.272546, 0.424809],
    [0.213431, 0.275266, 0.42448],
    [0.217863, 0.277985, 0.424206],
    [0.222264, 0.280702, 0.423914],
    [0.226598, 0.283419, 0.423678],
    [0.230871, 0.286134, 0.423498],
    [0.23512, 0.288848, 0.423304],
    [0.239312, 0.291562, 0.423167],
    [0.243485, 0.294274, 0.423014],
    [0.247605, 0.296986, 0.422917],
    [0.251675, 0.299698, 0.422873],
    [0.255731, 0.302409, 0.422814],
    [0.25974, 0.30512, 0.42281],
    [0.263738, 0.307831, 0.422789],
    [0.267693, 0.310542, 0.422821],
    [0.271639, 0.313253, 0.422837],
    [0.275513, 0.315965, 0.422979],
    [0.279411, 0.318677, 0.423031],
    [0.28324, 0.32139, 0.423211],
    [0.287065, 0.324103, 0.423373],
    [0.290884, 0.326816, 0.423517],
    [0.294669, 0.329531, 0.423716],
    [0.298421, 0.332247, 0.423973],
    [0.302169, 0.334963, 0.424213],
    [0.305886, 0.337681, 0.424512],
    [0.309601, 0.340399, 0.42479],
    [0.313287, 0.34312, 0.42512],
    [0.316941, 0.345842, 0.425512],
    [0.320595, 0.348565, 0.425889],
    [0.32425, 0.351289, 0.42625],
    [0.327875, 0.354016, 0.42667],
    [0.331474, 0.356744, 0.427144],
    [0.335073, 0.359474, 0.427605],
    [0.338673, 0.362206, 0.428053],
    [0.342246, 0.364939, 0.428559],
    [0.345793, 0.367676, 0.429127],
    [0.349341, 0.370414, 0.429685],
    [0.352892, 0.373153, 0.430226],
    [0.356418, 0.375896, 0.430823],
    [0.359916, 0.378641, 0.431501],
    [0.363446, 0.381388, 0.432075],
    [0.366923, 0.384139, 0.432796],
    [0.37043, 0.38689, 0.433428],
    [0.373884, 0.389646, 0.434209],
    [0.377371, 0.392404, 0.43489],
    [0.38083, 0.395164, 0.435653],
    [0.384268, 0.397928, 0.436475],
    [0.387705, 0.400694, 0.437305],
    [0.391151, 0.403464, 0.438096],
    [0.394568, 0.406236, 0.438986],
    [0.397991, 0.409011, 0.439848],
    [0.401418, 0.41179, 0.440708],
    [0.40482, 0.414572, 0.441642],
    [0.408226, 0.417357, 0.44257],
    [0.411607, 0.420145, 0.443577],
    [0.414992, 0.422937, 0.444578],
    [0.418383, 0.425733, 0.44556],
    [0.421748, 0.428531, 0.44664],
    [0.42512, 0.431334, 0.447692],
    [0.428462, 0.43414, 0.448864],
    [0.431817, 0.43695, 0.449982],
    [0.435168, 0.439763, 0.451134],
    [0.438504, 0.44258, 0.452341],
    [0.44181, 0.445402, 0.453659],
    [0.445148, 0.448226, 0.454885],
    [0.448447, 0.451053, 0.456264],
    [0.451759, 0.453887, 0.457582],
    [0.455072, 0.456718, 0.458976],
    [0.458366, 0.459552, 0.460457],
    [0.461616, 0.462405, 0.461969],
    [0.464947, 0.465241, 0.463395],
    [0.468254, 0.468083, 0.464908],
    [0.471501, 0.47096, 0.466357],
    [0.474812, 0.473832, 0.467681],
    [0.478186, 0.476699, 0.468845],
    [0.481622, 0.479573, 0.469767],
    [0.485141, 0.482451, 0.470384],
    [0.488697, 0.485318, 0.471008],
    [0.492278, 0.488198, 0.471453],
    [0.495913, 0.491076, 0.471751],
    [0.499552, 0.49396, 0.472032],
    [0.503185, 0.496851, 0.472305],
    [0.506866, 0.499743, 0.472432],
    [0.51054, 0.502643, 0.47255],
    [0.514226, 0.505546, 0.47264],
    [0.51792, 0.508454, 0.472707],
    [0.521643, 0.511367, 0.472639],
    [0.525348, 0.514285, 0.47266],
    [0.529086, 0.517207, 0.472543],
    [0.532829, 0.520135, 0.472401],
    [0.536553, 0.523067, 0.472352],
    [0.540307, 0.526005, 0.472163],
    [0.544069, 0.528948, 0.471947],
    [0.54784, 0.531895, 0.471704],
    [0.551612, 0.534849, 0.471439],
    [0.555393, 0.537807, 0.471147],
    [0.559181, 0.540771, 0.470829],
    [0.562972, 0.543741, 0.470488],
    [0.566802, 0.546715, 0.469988],
    [0.570607, 0.549695, 0.469593],
    [0.574417, 0.552682, 0.469172],
    [0.578236, 0.555673, 0.468724],
    [0.582087, 0.55867, 0.468118],
    [0.585916, 0.561674, 0.467618],
    [0.589753, 0.564682, 0.46709],
    [0.593622, 0.567697, 0.466401],
    [0.597469, 0.570718, 0.465821],
    [0.601354, 0.573743, 0.465074],
    [0.605211, 0.576777, 0.464441],
    [0.609105, 0.579816, 0.463638],
    [0.612977, 0.582861, 0.46295],
    [0.616852, 0.585913, 0.462237],
    [0.620765, 0.58897, 0.461351],
    [0.624654, 0.592034, 0.460583],
    [0.628576, 0.595104, 0.459641],
    [0.632506, 0.59818, 0.458668],
    [0.636412, 0.601264, 0.457818],
    [0.640352, 0.604354, 0.456791],
    [0.64427, 0.60745, 0.455886],
    [0.648222, 0.610553, 0.454801],
    [0.652178, 0.613664, 0.453689],
    [0.656114, 0.61678, 0.452702],
    [0.660082, 0.619904, 0.451534],
    [0.664055, 0.623034, 0.450338],
    [0.668008, 0.626171, 0.44927],
    [0.671991, 0.629316, 0.448018],
    [0.675981, 0.632468, 0.446736],
    [0.679979, 0.635626, 0.445424],
    [0.68395, 0.638793, 0.444251],
    [0.687957, 0.641966, 0.442886],
    [0.691971, 0.645145, 0.441491],
    [0.695985, 0.648334, 0.440072],
    [0.700008, 0.651529, 0.438624],
    [0.704037, 0.654731, 0.437147],
    [0.708067, 0.657942, 0.435647],
    [0.712105, 0.66116, 0.434117],
    [0.716177, 0.664384, 0.432386],
    [0.720222, 0.667618, 0.430805],
    [0.724274, 0.670859, 0.429194],
    [0.728334, 0.674107, 0.427554],
    [0.732422, 0.677364, 0.425717],
    [0.736488, 0.680629, 0.424028],
    [0.740589, 0.6839, 0.422131],
    [0.744664, 0.687181, 0.420393],
    [0.748772, 0.69047, 0.418448],
    [0.752886, 0.693766, 0.416472],
    [0.756975, 0.697071, 0.414659],
    [0.761096, 0.700384, 0.412638],
    [0.765223, 0.703705, 0.410587],
    [0.769353, 0.707035, 0.408516],
    [0.773486, 0.710373, 0.406422],
    [0.777651, 0.713719, 0.404112],
    [0.781795, 0.717074, 0.401966],
    [0.785965, 0.720438, 0.399613],
    [0.790116, 0.72381, 0.397423],
    [0.794298, 0.72719, 0.395016],
    [0.79848, 0.73058, 0.392597],
    [0.802667, 0.733978, 0.390153],
    [0.806859, 0.737385, 0.387684],
    [0.811054, 0.740801, 0.385198],
    [0.815274, 0.744226, 0.382504],
    [0.819499, 0.747659, 0.379785],
    [0.823729, 0.751101, 0.377043],
    [0.827959, 0.754553, 0.374292],
    [0.832192, 0.758014, 0.371529],
    [0.836429, 0.761483, 0.368747],
    [0.840693, 0.764962, 0.365746],
    [0.844957, 0.76845, 0.362741],
    [0.849223, 0.771947, 0.359729],
    [0.853515, 0.775454, 0.3565],
    [0.857809, 0.778969, 0.353259],
    [0.862105, 0.782494, 0.350011],
    [0.866421, 0.786028, 0.346571],
    [0.870717, 0.789572, 0.343333],
    [0.875057, 0.793125, 0.339685],
    [0.879378, 0.796687, 0.336241],
    [0.88372, 0.800258, 0.332599],
    [0.888081, 0.803839, 0.32877],
    [0.89244, 0.80743, 0.324968],
    [0.896818, 0.81103, 0.320982],
    [0.901195, 0.814639, 0.317021],
    [0.905589, 0.818257, 0.312889],
    [0.91, 0.821885, 0.308594],
    [0.914407, 0.825522, 0.304348],
    [0.918828, 0.829168, 0.29996],
    [0.923279, 0.832822, 0.295244],
    [0.927724, 0.836486, 0.290611],
    [0.93218, 0.840159, 0.28588],
    [0.93666, 0.843841, 0.280876],
    [0.941147, 0.84753, 0.275815],
    [0.945654, 0.851228, 0.270532],
    [0.950178, 0.854933, 0.265085],
    [0.954725, 0.858646, 0.259365],
    [0.959284, 0.862365, 0.253563],
    [0.963872, 0.866089, 0.247445],
    [0.968469, 0.869819, 0.24131],
    [0.973114, 0.87355, 0.234677],
    [0.97778, 0.877281, 0.227954],
    [0.982497, 0.881008, 0.220878],
    [0.987293, 0.884718, 0.213336],
    [0.992218, 0.888385, 0.205468],
    [0.994847, 0.892954, 0.203445],
    [0.995249, 0.898384, 0.207561],
    [0.995503, 0.903866, 0.21237],
    [0.995737, 0.909344, 0.217772],
];
