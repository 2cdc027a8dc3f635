#!/usr/bin/env python

import re

from setuptools import setup, find_packages


def unique_flatten_dict(d):
  return list(set(sum( d.values(), [] )))


def read_version():
  with open("./tripleprior/_version.py") as f:
    return re.search(r'__version__ = "([^"]+)"', f.read()).group(1)


core_requires = [
  'numpy',
  'pandas >= 1.0',
  'typing-extensions',
  'tqdm',
  'joblib',
  'tomli; python_version < "3.11"',
]

stubs = [
  'pandas-stubs', 'tqdm-stubs'
]

dev_extras = {
    'docs': ['sphinx==3.4.3', 'docutils==0.16', 'sphinx_autodoc_typehints==1.11.1', 'sphinx-rtd-theme==0.5.1', 'Jinja2<3.1'],
    'test': ['flake8', 'mock', 'mypy', 'pytest'] + stubs,
    'build': ['build']
}

base_extras = {
    'preview': ['Pillow'],
}

extras_require = {

  **base_extras,
  **dev_extras,

  'all': unique_flatten_dict(base_extras),

  #kitchen sink for contributors
  'dev': unique_flatten_dict(base_extras) + unique_flatten_dict(dev_extras),

}

setup(
    name='tripleprior',
    version=read_version(),
    packages = find_packages(),
    package_data={'tripleprior': ['tests/*.py']},
    platforms='any',
    description = 'Degradation, semantic and structural priors guiding a mean-reverting SDE image restorer',
    long_description=open("./README.md").read(),
    long_description_content_type='text/markdown',
    python_requires='>=3.8',
    install_requires=core_requires,
    extras_require=extras_require,
    entry_points={
        'console_scripts': ['tripleprior=tripleprior.harness.cli:main'],
    },
    license='BSD',
    classifiers=[
        'Development Status :: 3 - Alpha',
        'Environment :: Console',
        'License :: OSI Approved :: BSD License',
        'Operating System :: OS Independent',
        'Intended Audience :: Science/Research',
        'Programming Language :: Python :: 3',
        'Programming Language :: Python :: 3.8',
        'Programming Language :: Python :: 3.9',
        'Programming Language :: Python :: 3.10',
        'Programming Language :: Python :: 3.11',
        'Topic :: Scientific/Engineering :: Artificial Intelligence',
        'Topic :: Scientific/Engineering :: Image Processing',
    ],
    keywords=['diffusion', 'SDE', 'image restoration', 'deraining', 'dehazing', 'denoising', 'autodiff', 'numpy']
)
