from setuptools import setup
from setuptools import find_packages
__version__ = '0.1.0'

setup(name='saakit',
      version=__version__,
      description='FixMatch semi-supervised training with sample adaptive augmentation',
      license='MIT',
      packages=find_packages(exclude=['tests']),
      python_requires='>=3.7',
      install_requires=[
                        'numpy>=1.17',
                        'Pillow>=6.0.0',
                        'rx>=3.0',
                        'typedload>=1.20',
                        'PyYAML>=5.0.0',
                        'psutil>=5.4.6',
                        'simplejson>=3.13.2',
                        'tqdm>=4.0'],
      tests_require=['pytest'],
      entry_points={
          'console_scripts': ['saakit=saakit.cli:main'],
      },
)
