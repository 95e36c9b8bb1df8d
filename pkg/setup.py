# coding=utf-8
# Copyright 2019 The Hirescast Authors.
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

"""Install hirescast."""

from setuptools import find_packages
from setuptools import setup

setup(
    name='hirescast',
    version='0.1.0',
    description='Desk-scale high-resolution weather forecasting',
    author='The Hirescast Authors',
    license='Apache 2.0',
    packages=find_packages(),
    package_data={'hirescast': ['configs/*.gin']},
    python_requires='>=3.7',
    install_requires=[
        'absl-py',
        'gin-config',
        'matplotlib',
        'numpy',
        'pandas>=1.4',
        'scipy',
    ],
    extras_require={
        'tests': [
            'pytest',
            'pylint',
        ],
    },
    entry_points={
        'console_scripts': ['hirescast = hirescast.main:console_main'],
    },
    classifiers=[
        'Development Status :: 3 - Alpha',
        'Intended Audience :: Science/Research',
        'License :: OSI Approved :: Apache Software License',
        'Topic :: Scientific/Engineering :: Atmospheric Science',
    ],
    keywords='weather forecasting transformer transfer learning',
)
