"""报表写盘：CSV 时间序列、缺陷序列、密度切片与 JSON 汇总。

同一配置与种子重复运行得到逐字节相同的文件：固定列顺序、17 位有效数字、
'\\n' 换行、JSON 键排序，且不写入任何时间戳。
"""
import json
import logging
import math
import os

import numpy as np

from config import REPORT_CONFIG

logger = logging.getLogger(__name__)


def _jsonable(value):
    """numpy 标量转 Python 类型，非有限浮点数转成字符串"""
    if isinstance(value, dict):
        return {str(k): _jsonable(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_jsonable(v) for v in value]
    if isinstance(value, np.generic):
        value = value.item()
    if isinstance(value, float) and not math.isfinite(value):
        return repr(value)
    return value


def write_csv(df, path):
    df.to_csv(path, index=False, float_format=REPORT_CONFIG['float_format'], lineterminator='\n')
    return path


def write_summary(summary, path):
    text = json.dumps(_jsonable(summary), sort_keys=True, indent=2, ensure_ascii=False)
    with open(path, 'w', encoding='utf-8', newline='\n') as fh:
        fh.write(text + '\n')
    return path


def write_bundle(bundle, out_dir=None):
    """写出一个 ReportBundle，返回 {文件名: 路径}"""
    out_dir = out_dir or os.path.join(REPORT_CONFIG['output_dir'], bundle.name)
    os.makedirs(out_dir, exist_ok=True)
    written = {
        'timeseries.csv': write_csv(bundle.timeseries, os.path.join(out_dir, 'timeseries.csv')),
        'defects.csv': write_csv(bundle.defects, os.path.join(out_dir, 'defects.csv')),
    }
    if bundle.densities is not None:
        written['densities.csv'] = write_csv(bundle.densities, os.path.join(out_dir, 'densities.csv'))
    if bundle.ensemble is not None:
        written['ensemble.csv'] = write_csv(bundle.ensemble, os.path.join(out_dir, 'ensemble.csv'))
    written['summary.json'] = write_summary(bundle.summary, os.path.join(out_dir, 'summary.json'))
    logger.info("reports written to %s", out_dir)
    return written
