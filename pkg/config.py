import os
from dotenv import load_dotenv

load_dotenv()

# 报表列名映射（内部键 -> CSV 表头）
COLUMN_LABELS = {
    't': 't',
    'mass': 'mass',
    'order_mass': 'mass_order_{k}',
    'trace_norm': 'trace_order_{k}',
    'eta': 'eta',
    'residual_bound': 'residual_bound',
    'orders_used': 'orders_used',
    'converged': 'converged',
    'degenerate': 'degenerate_count',
}

# 展开式配置
EXPANSION_DEFAULTS = {
    'tol': 1e-8,
    'n_cap': 200,
}

# 诚实性诊断配置
HONESTY_DEFAULTS = {
    'stabilization_span': 5,
    'window_samples': 8,
    'c_hat_step': 1e-3,
    'statistical_sigmas': 3.0,
}

# 台球几何配置
BILLIARD_DEFAULTS = {
    'tangent_eps': 1e-10,
    'vertex_eps': 1e-12,
    'max_rebounds': 1_000_000,
}

# 蒙特卡罗配置
MONTE_CARLO_DEFAULTS = {
    'n_particles': 100_000,
    'seed': 42,
    'max_jumps': 10_000,
}

# 报表输出配置
REPORT_CONFIG = {
    'output_dir': os.getenv('TRANSPORT_OUTPUT_DIR', 'reports'),
    'float_format': '%.17g',
    'order_columns': 40,
}

# 并行配置
PARALLEL_CONFIG = {
    'n_jobs': int(os.getenv('TRANSPORT_N_JOBS', 1)),
}

LOG_LEVEL = os.getenv('TRANSPORT_LOG_LEVEL', 'INFO')

# 内置场景目录
SCENARIO_DIR = os.path.join(os.path.dirname(os.path.abspath(__file__)), 'scenarios')
