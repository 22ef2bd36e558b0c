# -*- coding: utf-8 -*-

# Copyright 2026 The quotient-diffusion authors.
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

"""Module used to setup the library."""

from setuptools import find_packages, setup

version = "0.1.0"

install_requires = [
    "numpy",
    "scipy",
    "PyYAML",
]
tests_require = [
    'tox >= 2.3.1',
]

setup(
    name="quotient-diffusion",
    version=version,
    license='Apache-2.0: http://www.apache.org/licenses/LICENSE-2.0',
    package_dir={"": "lib"},
    packages=find_packages(where="lib"),
    zip_safe=False,
    python_requires=">=3.8",
    install_requires=install_requires,
    tests_require=tests_require,
    entry_points={
        "console_scripts": [
            "quotient-diffusion = quotient_diffusion.v0.cli:main",
        ],
    })
