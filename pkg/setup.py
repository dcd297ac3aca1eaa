# Copyright 2020 The Emuchain Authors.
#
# Licensed under the Apache License, Version 2.0 (the "License");
# you may not use this file except in compliance with the License.
# You may obtain a copy of the License at
#
#     http://www.apache.org/licenses/LICENSE-2.0
#
# Unless required by applicable law or agreed to in writing, software
# distributed under the License is distributed on an "AS IS" BASIS,
# WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
# See the License for the specific language governing permissions and
# limitations under the License.

# Lint as: python3
"""Install emuchain."""

import os
import sys
import setuptools

# To enable importing version.py directly, we add its path to sys.path.
version_path = os.path.join(os.path.dirname(__file__), 'emuchain')
sys.path.append(version_path)
from version import __version__  # pylint: disable=g-import-not-at-top

setuptools.setup(
    name='emuchain',
    version=__version__,
    description='Emulation, discrepancy and decision support for chains of '
                'simulators',
    author='The Emuchain Authors',
    license='Apache 2.0',
    packages=setuptools.find_packages(exclude=['examples', 'examples.*']),
    package_data={
        '': ['*.gin'],
    },
    scripts=[],
    install_requires=[
        'absl-py',
        'gin-config>=0.3.0',
        'networkx',
        'numpy',
        'scipy',
    ],
    extras_require={
        'test': ['pytest', 'pylint'],
    },
    entry_points={
        'console_scripts': [
            'emuchain = emuchain.pipeline.emuchain_run:console_entry_point',
        ],
    },
    classifiers=[
        'Development Status :: 4 - Beta',
        'Intended Audience :: Developers',
        'Intended Audience :: Science/Research',
        'License :: OSI Approved :: Apache Software License',
        'Topic :: Scientific/Engineering :: Mathematics',
    ],
    tests_require=['pytest'],
    setup_requires=['pytest-runner'],
    keywords='emulation gaussianprocess uncertainty historymatching decision',
)
